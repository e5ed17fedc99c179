//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::f64::consts::FRAC_1_SQRT_2;
use std::time::{Duration, Instant};

use kerr_distill::analytics::{self, ClosedForms, VerifyGrid};
use kerr_distill::cli::{linear_grid, sweep_rows};
use kerr_distill::protocols::{
    self, bitflip_round, form_coefficients, forms_of, ghz_round, hadamard_convert,
    initial_ensemble, party_modes, phaseflip_round, simulate, target_state, BranchOutcome,
    ComponentForm, Disposition, Protocol, ProtocolParams,
};
use kerr_distill::state::{BasisKet, Coefficients, Ensemble, PureState};
use kerr_distill::C64;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

const FIDELITIES: [f64; 9] = [0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
const GAMMAS: [f64; 4] = [0.3, 0.5, FRAC_1_SQRT_2, 0.8];
const RUNTIME_LIMIT: Duration = Duration::from_secs(1);
/// Renormalizing a branch sums two equal-in-exact-arithmetic pieces.
const WEIGHT_ROUNDING: f64 = 4.0 * f64::EPSILON;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn params(gamma: f64, fidelity: f64, rounds: usize, parties: usize) -> ProtocolParams {
    ProtocolParams::new(
        Coefficients::from_real_gamma(gamma).unwrap(),
        fidelity,
        rounds,
        parties,
    )
    .unwrap()
}

// Independent closed forms, written as direct products for real γ.

fn oracle_fidelity(f: f64) -> f64 {
    f * f / (f * f + (1.0 - f) * (1.0 - f))
}

fn oracle_concentration(gamma: f64, k: u32) -> f64 {
    let (g2, d2) = (gamma * gamma, 1.0 - gamma * gamma);
    let numerator = 2.0 * (g2 * d2).powf(2f64.powi(k as i32 - 1));
    let denominator: f64 = (1..=k)
        .map(|i| g2.powf(2f64.powi(i as i32 - 1)) + d2.powf(2f64.powi(i as i32 - 1)))
        .product();
    numerator / denominator
}

fn oracle_bitflip_total(gamma: f64, f: f64, n: u32) -> f64 {
    (1..=n).map(|k| oracle_concentration(gamma, k)).sum::<f64>() * (f * f + (1.0 - f) * (1.0 - f))
}

fn first_round(protocol: Protocol, p: &ProtocolParams) -> Vec<BranchOutcome> {
    let rho = initial_ensemble(protocol, p).unwrap();
    match protocol {
        Protocol::BitFlip => bitflip_round(&rho).unwrap(),
        Protocol::Ghz => ghz_round(&rho).unwrap(),
        Protocol::PhaseFlip => phaseflip_round(&rho, &p.coefficients).unwrap(),
    }
}

fn criterion_1() -> Outcome {
    let grid = linear_grid(0.0, 1.0, 90);
    let start = Instant::now();
    let rows = sweep_rows(Protocol::BitFlip, 0.8, 5, 2, &grid)?;
    let elapsed = start.elapsed();
    ensure(rows.len() == 450, || {
        format!("expected 450 rows, got {}", rows.len())
    })?;
    ensure(elapsed < RUNTIME_LIMIT, || {
        format!("90-point x 5-round sweep took {elapsed:?}")
    })?;

    let peak = sweep_rows(Protocol::BitFlip, 0.8, 5, 2, &[FRAC_1_SQRT_2])?;
    let (p1, p5) = (peak[0].p_total_sim, peak[4].p_total_sim);
    ensure((p1 - 0.34).abs() <= 0.005, || format!("P_t(N=1) = {p1}"))?;
    ensure((p5 - 0.66).abs() <= 0.005, || format!("P_t(N=5) = {p5}"))?;

    for r in rows.iter().filter(|r| r.gamma == 0.0 || r.gamma == 1.0) {
        ensure(
            r.p_total_sim.abs() <= 1e-12 && r.p_total_analytic.abs() <= 1e-12,
            || format!("P_t does not vanish at gamma={} N={}", r.gamma, r.rounds),
        )?;
    }

    let mirrored: Vec<f64> = grid.iter().map(|g| (1.0 - g * g).max(0.0).sqrt()).collect();
    let mirror_rows = sweep_rows(Protocol::BitFlip, 0.8, 5, 2, &mirrored)?;
    let mut asym: f64 = 0.0;
    for (a, b) in rows.iter().zip(&mirror_rows) {
        asym = asym.max((a.p_total_sim - b.p_total_sim).abs());
    }
    ensure(asym <= 1e-12, || {
        format!("asymmetry about 1/sqrt2 is {asym:e}")
    })?;
    Ok(format!(
        "P_t(N=1)={p1:.5} P_t(N=5)={p5:.5} asymmetry={asym:.1e} sweep={:.0}ms",
        elapsed.as_secs_f64() * 1e3
    ))
}

fn criterion_2() -> Outcome {
    let grid = VerifyGrid::default();
    let points = analytics::verify_grid(&grid, &ClosedForms).map_err(|e| e.to_string())?;
    ensure(points.len() >= 300, || {
        format!("only {} grid points", points.len())
    })?;
    let worst = points.iter().map(|p| p.max_abs_gap).fold(0.0, f64::max);
    let failed: Vec<_> = points.iter().filter(|p| !p.passed).collect();
    ensure(failed.is_empty() && worst <= 1e-9, || {
        format!("{} failing points, max gap {worst:e}", failed.len())
    })?;
    Ok(format!("{} points, max gap {worst:.1e}", points.len()))
}

fn fidelity_update_check(protocol: Protocol, parties: usize) -> Outcome {
    let target = target_state(protocol, parties).unwrap();
    let mut checked = 0;
    for &g in &GAMMAS {
        for &f in &FIDELITIES {
            let expected = oracle_fidelity(f);
            for b in first_round(protocol, &params(g, f, 1, parties)) {
                if b.disposition != Disposition::Success {
                    continue;
                }
                let got = b.post.fidelity_against(&target).unwrap();
                ensure((got - expected).abs() <= 1e-12 && got > f, || {
                    format!("gamma={g} F={f}: branch fidelity {got}, expected {expected}")
                })?;
                checked += 1;
            }
        }
    }
    ensure(checked > 0, || "no success branches".into())?;
    Ok(format!("{checked} success branches"))
}

fn criterion_3() -> Outcome {
    fidelity_update_check(Protocol::BitFlip, 2)
}

fn cross_exclusion_check(protocol: Protocol, parties: usize) -> Outcome {
    let mut discarded: f64 = 0.0;
    for &g in &GAMMAS {
        for &f in &FIDELITIES {
            let mut cross_total = 0.0;
            for b in first_round(protocol, &params(g, f, 1, parties)) {
                for c in b
                    .contributions
                    .iter()
                    .filter(|c| c.components[0] != c.components[1])
                {
                    if b.disposition == Disposition::Discard {
                        cross_total += c.probability;
                    } else {
                        ensure(c.probability == 0.0, || {
                            format!(
                                "gamma={g} F={f}: {:?} leaks {:e} into {:?}",
                                c.components,
                                c.probability,
                                b.class_pattern()
                            )
                        })?;
                    }
                }
            }
            let expected = 2.0 * f * (1.0 - f);
            ensure((cross_total - expected).abs() <= 1e-12, || {
                format!("gamma={g} F={f}: cross weight {cross_total} in mixed classes, expected {expected}")
            })?;
            discarded = discarded.max((cross_total - expected).abs());
        }
    }
    Ok(format!(
        "no leakage, all cross weight discarded (err {discarded:.1e})"
    ))
}

fn criterion_4() -> Outcome {
    cross_exclusion_check(Protocol::BitFlip, 2)
}

fn criterion_5() -> Outcome {
    for g in [0.2, 0.3, 0.5, 0.6, 0.8, 0.9] {
        let run = simulate(Protocol::BitFlip, &params(g, 1.0, 3, 2)).unwrap();
        let expected = 2.0 * g * g * (1.0 - g * g);
        let p1 = run.rounds[0].success_probability;
        ensure((p1 - expected).abs() <= 1e-12, || {
            format!("F=1 gamma={g}: P1={p1}, expected {expected}")
        })?;
        for n in 1..=3 {
            let fo = run.output_fidelity_through(n).unwrap_or(f64::NAN);
            ensure((fo - 1.0).abs() <= 1e-12, || {
                format!("F=1 gamma={g} N={n}: F_out={fo}")
            })?;
        }
    }
    let mut f_grid = FIDELITIES.to_vec();
    f_grid.extend([0.5, 1.0]);
    for f in f_grid {
        let run = simulate(Protocol::BitFlip, &params(FRAC_1_SQRT_2, f, 1, 2)).unwrap();
        let r = &run.rounds[0];
        let expected_p = (f * f + (1.0 - f) * (1.0 - f)) / 2.0;
        ensure((r.success_probability - expected_p).abs() <= 1e-12, || {
            format!(
                "gamma=delta F={f}: P1={}, expected {expected_p}",
                r.success_probability
            )
        })?;
        let fo = r.success_fidelity.unwrap();
        ensure((fo - oracle_fidelity(f)).abs() <= 1e-12, || {
            format!("gamma=delta F={f}: F'={fo}")
        })?;
    }
    Ok("F=1 concentration and gamma=delta purification limits hold".into())
}

/// Component of `state` in `forms` carrying the full norm, as `(c₁, c₂)`.
fn member_coefficients(state: &PureState, forms: &[ComponentForm]) -> Option<(C64, C64)> {
    forms.iter().find_map(|&form| {
        let (c1, c2) = form_coefficients(state, form).ok()?;
        ((c1.norm_sqr() + c2.norm_sqr() - 1.0).abs() <= 1e-12).then_some((c1, c2))
    })
}

fn recursion_check(protocol: Protocol, parties: usize) -> Outcome {
    let forms = forms_of(protocol, parties);
    let mut worst: f64 = 0.0;
    for g in [0.3, 0.5, 0.6, 0.8] {
        for f in [0.7, 0.8, 0.9] {
            let run = simulate(protocol, &params(g, f, 5, parties)).unwrap();
            for k in 1..=4u32 {
                let frontier = &run.rounds[k as usize].frontier;
                ensure(!frontier.is_empty(), || {
                    format!("gamma={g}: nothing recycled after round {k}")
                })?;
                let power = 2f64.powi(k as i32);
                let (gk, dk) = (g.powf(power), (1.0 - g * g).sqrt().powf(power));
                let norm = (gk * gk + dk * dk).sqrt();
                let (gk, dk) = (gk / norm, dk / norm);
                for entry in frontier {
                    for (_, s) in entry.ensemble.members() {
                        let (c1, c2) = member_coefficients(s, &forms).ok_or_else(|| {
                            format!("gamma={g} k={k}: member outside the component forms")
                        })?;
                        let cross = (c1 * dk - c2 * gk).norm();
                        worst = worst.max(cross);
                        ensure(cross <= 1e-12, || {
                            format!("gamma={g} F={f} k={k}: ({c1}, {c2}) not proportional to ({gk}, {dk})")
                        })?;
                    }
                }
            }
        }
    }
    Ok(format!(
        "k=1..4 proportional, max |c1 d_k - c2 g_k| {worst:.1e}"
    ))
}

fn criterion_6() -> Outcome {
    recursion_check(Protocol::BitFlip, 2)
}

fn branches_match(
    a: &BranchOutcome,
    b: &BranchOutcome,
    ta: &PureState,
    tb: &PureState,
) -> Result<(), String> {
    ensure(
        a.class_pattern() == b.class_pattern() && a.pm_pattern() == b.pm_pattern(),
        || {
            format!(
                "patterns differ: {:?} vs {:?}",
                a.class_pattern(),
                b.class_pattern()
            )
        },
    )?;
    ensure(a.disposition == b.disposition, || {
        "dispositions differ".into()
    })?;
    ensure((a.probability - b.probability).abs() <= 1e-12, || {
        format!(
            "{:?}: {} vs {}",
            a.class_pattern(),
            a.probability,
            b.probability
        )
    })?;
    if a.disposition == Disposition::Success {
        let (fa, fb) = (
            a.post.fidelity_against(ta).unwrap(),
            b.post.fidelity_against(tb).unwrap(),
        );
        ensure((fa - fb).abs() <= 1e-12, || {
            format!("success fidelity {fa} vs {fb}")
        })?;
    }
    Ok(())
}

fn criterion_7() -> Outcome {
    let t_bit = target_state(Protocol::BitFlip, 2).unwrap();
    let t_ghz = target_state(Protocol::Ghz, 2).unwrap();
    let mut compared = 0;
    for &g in &GAMMAS {
        for f in [0.6, 0.8, 0.95] {
            let p = params(g, f, 4, 2);
            let bit = simulate(Protocol::BitFlip, &p).unwrap();
            let ghz = simulate(Protocol::Ghz, &p).unwrap();
            for (rb, rg) in bit.rounds.iter().zip(&ghz.rounds) {
                ensure(rb.branches.len() == rg.branches.len(), || {
                    "frontier sizes differ".into()
                })?;
                for (bb, bg) in rb.branches.iter().zip(&rg.branches) {
                    ensure(bb.len() == bg.len(), || {
                        format!("round {}: branch counts differ", rb.round)
                    })?;
                    for (x, y) in bb.iter().zip(bg) {
                        branches_match(x, y, &t_bit, &t_ghz)
                            .map_err(|e| format!("gamma={g} F={f} round {}: {e}", rb.round))?;
                        compared += 1;
                    }
                }
            }
        }
    }

    for parties in [3, 4] {
        fidelity_update_check(Protocol::Ghz, parties)
            .map_err(|e| format!("parties={parties}: {e}"))?;
        cross_exclusion_check(Protocol::Ghz, parties)
            .map_err(|e| format!("parties={parties}: {e}"))?;
        recursion_check(Protocol::Ghz, parties).map_err(|e| format!("parties={parties}: {e}"))?;
    }

    let mut worst: f64 = 0.0;
    for &g in &GAMMAS {
        for &f in &FIDELITIES {
            let run = simulate(Protocol::Ghz, &params(g, f, 4, 3)).unwrap();
            for r in &run.rounds {
                for branches in &r.branches {
                    let total: f64 = branches.iter().map(|b| b.probability).sum();
                    worst = worst.max((total - 1.0).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-12, || {
        format!("parties=3 branch sums off by {worst:e}")
    })?;

    let start = Instant::now();
    let run = simulate(Protocol::Ghz, &params(0.6, 0.8, 3, 4)).unwrap();
    let elapsed = start.elapsed();
    ensure(run.rounds.len() == 3, || "missing rounds".into())?;
    ensure(elapsed < RUNTIME_LIMIT, || {
        format!("parties=4 N=3 took {elapsed:?}")
    })?;
    Ok(format!(
        "{compared} branches match bitflip, parties=3 sums within {worst:.1e}, parties=4 N=3 in {:.0}ms",
        elapsed.as_secs_f64() * 1e3
    ))
}

fn psi_plus() -> PureState {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    PureState::from_terms(
        party_modes(2, 1),
        [
            ("HV".parse::<BasisKet>().unwrap(), h),
            ("VH".parse().unwrap(), h),
        ],
    )
    .unwrap()
}

fn phi_minus() -> PureState {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    PureState::from_terms(
        party_modes(2, 1),
        [
            ("HH".parse::<BasisKet>().unwrap(), h),
            ("VV".parse().unwrap(), -h),
        ],
    )
    .unwrap()
}

/// Weights of the `+` and `−` members of a `{HH, VV}` mixture.
fn sign_weights(e: &Ensemble) -> Result<(f64, f64), String> {
    let (mut plus, mut minus) = (0.0, 0.0);
    for (w, s) in e.members() {
        let (c1, c2) = form_coefficients(s, ComponentForm::PHI_PLUS).map_err(|e| e.to_string())?;
        let ratio = c2 / c1;
        ensure(ratio.im.abs() <= 1e-12, || {
            format!("member with complex ratio {ratio}")
        })?;
        if ratio.re > 0.0 {
            plus += w;
        } else {
            minus += w;
        }
    }
    Ok((plus, minus))
}

fn criterion_8() -> Outcome {
    let bell = protocols::bell_target();
    let (psi, phim) = (psi_plus(), phi_minus());
    let mut weight_err: f64 = 0.0;
    for &g in &GAMMAS {
        for &f in &FIDELITIES {
            let p = params(g, f, 1, 2);
            for b in first_round(Protocol::PhaseFlip, &p) {
                if b.disposition == Disposition::Discard {
                    continue;
                }
                let (plus, minus) = sign_weights(&b.post)?;
                weight_err = weight_err
                    .max((plus - f).abs())
                    .max((minus - (1.0 - f)).abs());
                ensure(weight_err <= WEIGHT_ROUNDING, || {
                    format!(
                        "gamma={g} F={f} {:?}: weights ({plus}, {minus})",
                        b.disposition
                    )
                })?;
                if b.disposition != Disposition::Success {
                    continue;
                }
                let fp = b.post.fidelity_against(&bell).unwrap();
                let fm = b.post.fidelity_against(&phim).unwrap();
                ensure(
                    (fp - f).abs() <= 1e-12 && (fm - (1.0 - f)).abs() <= 1e-12,
                    || format!("gamma={g} F={f}: success is not F phi+ + (1-F) phi-"),
                )?;
                let converted = hadamard_convert(&b.post).map_err(|e| e.to_string())?;
                let (cp, cs) = (
                    converted.fidelity_against(&bell).unwrap(),
                    converted.fidelity_against(&psi).unwrap(),
                );
                ensure(
                    (cp - f).abs() <= 1e-12 && (cs - (1.0 - f)).abs() <= 1e-12,
                    || format!("gamma={g} F={f}: converted weights ({cp}, {cs})"),
                )?;
                let fid = bitflip_round(&converted)
                    .map_err(|e| e.to_string())?
                    .iter()
                    .filter(|x| x.disposition == Disposition::Success)
                    .map(|x| x.post.fidelity_against(&bell).unwrap())
                    .fold(f64::NAN, f64::max);
                ensure((fid - oracle_fidelity(f)).abs() <= 1e-12, || {
                    format!("gamma={g} F={f}: converted state purifies to {fid}")
                })?;
            }
        }
    }

    let mut gap: f64 = 0.0;
    for g in [0.1, 0.3, 0.5, 0.6, FRAC_1_SQRT_2, 0.8, 0.9] {
        let run = simulate(Protocol::PhaseFlip, &params(g, 0.8, 5, 2)).unwrap();
        let mut cumulative = 0.0;
        for (n, r) in run.rounds.iter().enumerate() {
            cumulative += r.success_probability;
            let expected = oracle_bitflip_total(g, 1.0, n as u32 + 1);
            gap = gap.max((cumulative - expected).abs());
        }
    }
    ensure(gap <= 1e-9, || format!("cumulative P_p gap {gap:e}"))?;
    Ok(format!(
        "weights within {weight_err:.1e}, converted to bit-flip form, P_p gap {gap:.1e}"
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "sweep peak values, symmetry, runtime", criterion_1),
        (2, "oracle equivalence on default grid", criterion_2),
        (3, "bit-flip fidelity update", criterion_3),
        (4, "cross-combination exclusion", criterion_4),
        (5, "limiting cases", criterion_5),
        (6, "recursion structure", criterion_6),
        (7, "GHZ reduction and scaling", criterion_7),
        (8, "phase-flip pipeline", criterion_8),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        match check() {
            Ok(detail) => println!("criterion {n}: PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
