//! Closed-form success probabilities and fidelities, and the harness that
//! checks them against branch enumeration.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

use crate::error::{DistillError, Result};
use crate::protocols::{self, Protocol, ProtocolParams, SimulatedRun};
use crate::state::Coefficients;

/// Largest tolerated |analytic − simulated| in [`verify`].
pub const VERIFY_TOLERANCE: f64 = 1e-9;

fn check_probability(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(DistillError::InvalidProbability(f));
    }
    Ok(())
}

/// `F' = F² / (F² + (1−F)²)`.
pub fn fidelity_update(f: f64) -> Result<f64> {
    check_probability(f)?;
    if f == 0.0 || f == 1.0 {
        return Ok(f);
    }
    let (good, bad) = (f * f, (1.0 - f) * (1.0 - f));
    Ok(good / (good + bad))
}

/// `F² + (1−F)²`, the probability that both copies carry the same component.
fn same_component(f: f64) -> f64 {
    f * f + (1.0 - f) * (1.0 - f)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `2|γδ|^(2^k) / Π_{i=1..k} (|γ|^(2^i) + |δ|^(2^i))`.
///
/// Evaluated in log space: at `γ = δ` the numerator and the product both
/// underflow double precision after about ten rounds while their ratio is
/// `2^(1−k)`.
pub fn concentration_increment(c: &Coefficients, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(DistillError::InvalidRound(k));
    }
    let (g2, d2) = (c.gamma().norm_sqr(), c.delta().norm_sqr());
    if g2 == 0.0 || d2 == 0.0 {
        return Ok(0.0);
    }
    let (lg, ld) = (g2.ln(), d2.ln());
    // |x|^(2^i) = exp(2^(i-1) · ln|x|²)
    let exponent = |i: usize| 2f64.powi(i as i32 - 1);
    let numerator = LN_2 + exponent(k) * (lg + ld);
    let denominator: f64 = (1..=k)
        .map(|i| log_add_exp(exponent(i) * lg, exponent(i) * ld))
        .sum();
    Ok((numerator - denominator).exp())
}

/// Unconditional success probability of bit-flip round `k`.
pub fn p_bitflip_round(c: &Coefficients, f: f64, k: usize) -> Result<f64> {
    check_probability(f)?;
    Ok(concentration_increment(c, k)? * same_component(f))
}

pub fn p_bitflip_total(c: &Coefficients, f: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(DistillError::InvalidRound(n));
    }
    (1..=n).map(|k| p_bitflip_round(c, f, k)).sum()
}

/// Unconditional success probability of phase-flip round `k`.
pub fn p_phase_round(c: &Coefficients, k: usize) -> Result<f64> {
    concentration_increment(c, k)
}

pub fn p_phase_total(c: &Coefficients, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(DistillError::InvalidRound(n));
    }
    (1..=n).map(|k| p_phase_round(c, k)).sum()
}

/// Source of the analytic column in an [`IterationReport`].
pub trait Formulas: Sync {
    fn round_probability(
        &self,
        protocol: Protocol,
        c: &Coefficients,
        f: f64,
        k: usize,
    ) -> Result<f64>;
    fn output_fidelity(&self, protocol: Protocol, f: f64) -> Result<f64>;
}

/// The closed forms of this module. The GHZ protocol shares the bit-flip
/// expressions; the phase-flip protocol leaves `F` unchanged.
#[derive(Copy, Clone, Debug, Default)]
pub struct ClosedForms;

impl Formulas for ClosedForms {
    fn round_probability(
        &self,
        protocol: Protocol,
        c: &Coefficients,
        f: f64,
        k: usize,
    ) -> Result<f64> {
        match protocol {
            Protocol::BitFlip | Protocol::Ghz => p_bitflip_round(c, f, k),
            Protocol::PhaseFlip => p_phase_round(c, k),
        }
    }

    fn output_fidelity(&self, protocol: Protocol, f: f64) -> Result<f64> {
        match protocol {
            Protocol::BitFlip | Protocol::Ghz => fidelity_update(f),
            Protocol::PhaseFlip => {
                check_probability(f)?;
                Ok(f)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundComparison {
    pub round: usize,
    pub analytic: f64,
    pub simulated: f64,
    /// Simulated probability of entering this round.
    pub reach_simulated: f64,
    /// Simulated success probability given the round was entered.
    pub conditional_simulated: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationReport {
    pub protocol: Protocol,
    pub params: ProtocolParams,
    pub per_round: Vec<RoundComparison>,
    /// `(analytic, simulated)`; each side is the sum of its own per-round column.
    pub cumulative: (f64, f64),
    /// `(analytic, simulated)`; the simulated side is `None` when nothing succeeded.
    pub output_fidelity: (f64, Option<f64>),
    pub max_abs_gap: f64,
}

/// Lines an enumerated run up against `forms`.
pub fn compare(run: &SimulatedRun, forms: &dyn Formulas) -> Result<IterationReport> {
    let c = run.params.coefficients;
    let f = run.params.fidelity;
    let mut per_round = Vec::with_capacity(run.rounds.len());
    let mut gap = 0.0f64;
    for r in &run.rounds {
        let analytic = forms.round_probability(run.protocol, &c, f, r.round)?;
        gap = gap.max((analytic - r.success_probability).abs());
        per_round.push(RoundComparison {
            round: r.round,
            analytic,
            simulated: r.success_probability,
            reach_simulated: r.reach_probability(),
            conditional_simulated: r.conditional_success(),
        });
    }
    let cumulative = (
        per_round.iter().map(|r| r.analytic).sum::<f64>(),
        per_round.iter().map(|r| r.simulated).sum::<f64>(),
    );
    gap = gap.max((cumulative.0 - cumulative.1).abs());

    let fid_analytic = forms.output_fidelity(run.protocol, f)?;
    let fid_simulated = run.output_fidelity_through(run.rounds.len());
    if let Some(sim) = fid_simulated {
        gap = gap.max((fid_analytic - sim).abs());
    }

    Ok(IterationReport {
        protocol: run.protocol,
        params: run.params.clone(),
        per_round,
        cumulative,
        output_fidelity: (fid_analytic, fid_simulated),
        max_abs_gap: gap,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verification {
    pub report: IterationReport,
    pub passed: bool,
}

pub fn verify(protocol: Protocol, params: &ProtocolParams) -> Result<Verification> {
    verify_with(protocol, params, &ClosedForms)
}

/// Disagreement is reported through [`Verification::passed`], not as an error.
pub fn verify_with(
    protocol: Protocol,
    params: &ProtocolParams,
    forms: &dyn Formulas,
) -> Result<Verification> {
    let run = protocols::simulate(protocol, params)?;
    let report = compare(&run, forms)?;
    let passed = report.max_abs_gap <= VERIFY_TOLERANCE;
    Ok(Verification { report, passed })
}

/// Parameter grid for [`verify_grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyGrid {
    pub protocols: Vec<Protocol>,
    pub gammas: Vec<f64>,
    pub fidelities: Vec<f64>,
    /// Every `N` in `1..=max_rounds` is checked.
    pub max_rounds: usize,
    pub ghz_parties: Vec<usize>,
}

impl Default for VerifyGrid {
    /// `γ ∈ {0.1, …, 0.9} ∪ {1/√2}`, `F ∈ {0.5, …, 1.0}`, `N ≤ 4`, all
    /// protocols, GHZ with 2, 3 and 4 parties.
    fn default() -> Self {
        let mut gammas: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        gammas.push(FRAC_1_SQRT_2);
        gammas.sort_by(f64::total_cmp);
        Self {
            protocols: Protocol::ALL.to_vec(),
            gammas,
            fidelities: (5..=10).map(|i| i as f64 / 10.0).collect(),
            max_rounds: 4,
            ghz_parties: vec![2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub protocol: Protocol,
    pub parties: usize,
    pub gamma: f64,
    pub fidelity: f64,
    pub rounds: usize,
    pub max_abs_gap: f64,
    pub passed: bool,
}

impl VerifyGrid {
    pub fn point_count(&self) -> usize {
        let per_protocol = self.gammas.len() * self.fidelities.len() * self.max_rounds;
        self.protocols
            .iter()
            .map(|p| match p {
                Protocol::Ghz => per_protocol * self.ghz_parties.len(),
                _ => per_protocol,
            })
            .sum()
    }
}

/// Runs [`verify_with`] at every grid point, in a fixed order.
pub fn verify_grid(grid: &VerifyGrid, forms: &dyn Formulas) -> Result<Vec<GridPoint>> {
    let mut points = Vec::with_capacity(grid.point_count());
    for &protocol in &grid.protocols {
        let parties: Vec<usize> = match protocol {
            Protocol::Ghz => grid.ghz_parties.clone(),
            _ => vec![2],
        };
        for &n in &parties {
            for &gamma in &grid.gammas {
                let c = Coefficients::from_real_gamma(gamma)?;
                for &fidelity in &grid.fidelities {
                    for rounds in 1..=grid.max_rounds {
                        let params = ProtocolParams::new(c, fidelity, rounds, n)?;
                        let v = verify_with(protocol, &params, forms)?;
                        points.push(GridPoint {
                            protocol,
                            parties: n,
                            gamma,
                            fidelity,
                            rounds,
                            max_abs_gap: v.report.max_abs_gap,
                            passed: v.passed,
                        });
                    }
                }
            }
        }
    }
    Ok(points)
}
