//! Distillation rounds, enumerated branch by branch.
//!
//! Every round is expanded exhaustively: each pairing of ensemble members is
//! pushed through the bit flips and parity checks, every probe is read out,
//! and the surviving photons are measured in the `|±⟩` basis with classical
//! phase-flip feedforward. Branches are keyed by the joint shift-class pattern
//! and the `±` record, merged across ensemble members, and returned in sorted
//! order so that output does not depend on evaluation order.
//!
//! Mode naming: party `i` (0-based) owns modes `<letter>1` (the pair being
//! distilled) and `<letter>2` (the sacrificed copy), with letters `a`, `b`,
//! `c`, ...; its probe is the uppercase letter. Single-photon ancillas live in
//! mode `anc`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;

use crate::analytics::{self, IterationReport};
use crate::error::{DistillError, Result};
use crate::qnd::{ProbeId, ShiftClass, TaggedState};
use crate::state::{
    mode_names, BasisKet, Coefficients, Ensemble, ModeLabel, Pm, Polarization, PureState,
    NORM_TOLERANCE,
};

/// Largest accepted `max_rounds`.
pub const MAX_ROUNDS: usize = 64;
/// Largest accepted party count (one letter per party).
pub const MAX_PARTIES: usize = 26;
/// Tolerated deviation of a recycled member from its expected coefficient form.
pub const FORM_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_ROUNDS: usize = 5;

const ANCILLA_MODE: &str = "anc";

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    BitFlip,
    PhaseFlip,
    Ghz,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::BitFlip, Protocol::PhaseFlip, Protocol::Ghz];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::BitFlip => "bitflip",
            Protocol::PhaseFlip => "phaseflip",
            Protocol::Ghz => "ghz",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bitflip" => Ok(Protocol::BitFlip),
            "phaseflip" => Ok(Protocol::PhaseFlip),
            "ghz" => Ok(Protocol::Ghz),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Disposition {
    Success,
    Recyclable,
    Discard,
}

impl fmt::Display for Disposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Disposition::Success => "success",
            Disposition::Recyclable => "recyclable",
            Disposition::Discard => "discard",
        })
    }
}

/// Probability that a branch received from one pairing of input members.
/// Two-copy rounds record `[i, j]`; ancilla rounds record `[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Contribution {
    pub components: Vec<usize>,
    pub probability: f64,
}

/// One classical measurement record of a round.
#[derive(Clone, Debug)]
pub struct BranchOutcome {
    pub shift_classes: BTreeMap<ProbeId, ShiftClass>,
    pub pm_results: BTreeMap<ModeLabel, Pm>,
    pub probability: f64,
    pub post: Ensemble,
    pub disposition: Disposition,
    pub contributions: Vec<Contribution>,
}

impl BranchOutcome {
    pub fn class_pattern(&self) -> Vec<ShiftClass> {
        self.shift_classes.values().copied().collect()
    }

    pub fn pm_pattern(&self) -> Vec<Pm> {
        self.pm_results.values().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolParams {
    pub coefficients: Coefficients,
    pub fidelity: f64,
    pub max_rounds: usize,
    /// Used by the GHZ protocol only.
    pub parties: usize,
}

impl ProtocolParams {
    pub fn new(
        coefficients: Coefficients,
        fidelity: f64,
        max_rounds: usize,
        parties: usize,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&fidelity) {
            return Err(DistillError::InvalidProbability(fidelity));
        }
        if max_rounds == 0 || max_rounds > MAX_ROUNDS {
            return Err(DistillError::InvalidRound(max_rounds));
        }
        if !(2..=MAX_PARTIES).contains(&parties) {
            return Err(DistillError::InvalidParties(parties));
        }
        Ok(Self {
            coefficients,
            fidelity,
            max_rounds,
            parties,
        })
    }

    /// Two parties, [`DEFAULT_MAX_ROUNDS`] rounds.
    pub fn bipartite(coefficients: Coefficients, fidelity: f64) -> Result<Self> {
        Self::new(coefficients, fidelity, DEFAULT_MAX_ROUNDS, 2)
    }

    pub fn with_rounds(mut self, max_rounds: usize) -> Result<Self> {
        if max_rounds == 0 || max_rounds > MAX_ROUNDS {
            return Err(DistillError::InvalidRound(max_rounds));
        }
        self.max_rounds = max_rounds;
        Ok(self)
    }
}

/// Single photon `∝ γ^(2^k)|H⟩ + δ^(2^k)|V⟩` prepared for round `k + 1`.
/// `k = 0` is the plain `γ|H⟩ + δ|V⟩` photon of the first phase-flip round.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct AncillaSpec {
    round: usize,
    coefficients: Coefficients,
}

impl AncillaSpec {
    pub fn new(base: &Coefficients, round: usize) -> Self {
        Self {
            round,
            coefficients: base.concentrated(round),
        }
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn coefficients(&self) -> Coefficients {
        self.coefficients
    }

    pub fn state(&self, mode: ModeLabel) -> Result<PureState> {
        PureState::from_terms(
            vec![mode],
            [
                (
                    BasisKet::new(vec![Polarization::H]),
                    self.coefficients.gamma(),
                ),
                (
                    BasisKet::new(vec![Polarization::V]),
                    self.coefficients.delta(),
                ),
            ],
        )
    }
}

/// Shape `c₁|k⟩ ± c₂|k̄⟩` of a mixture component, where `k` is all-H except
/// for at most one V and `k̄` is its complement.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ComponentForm {
    flipped: Option<usize>,
    negated: bool,
}

impl ComponentForm {
    /// `c₁|H…H⟩ + c₂|V…V⟩`
    pub const PHI_PLUS: ComponentForm = ComponentForm {
        flipped: None,
        negated: false,
    };
    /// `c₁|H…H⟩ − c₂|V…V⟩`
    pub const PHI_MINUS: ComponentForm = ComponentForm {
        flipped: None,
        negated: true,
    };

    /// `c₁|H…V…H⟩ + c₂|V…H…V⟩` with the odd photon at `index`.
    pub fn psi(index: usize) -> Self {
        Self {
            flipped: Some(index),
            negated: false,
        }
    }

    pub fn state(&self, coeffs: &Coefficients, modes: Vec<ModeLabel>) -> Result<PureState> {
        let mut pols = vec![Polarization::H; modes.len()];
        if let Some(i) = self.flipped {
            if i >= pols.len() {
                return Err(DistillError::MalformedEnsemble(format!(
                    "flip index {i} out of range"
                )));
            }
            pols[i] = Polarization::V;
        }
        let ket = BasisKet::new(pols);
        let sign = if self.negated { -1.0 } else { 1.0 };
        PureState::from_terms(
            modes,
            [
                (ket.complement(), coeffs.delta() * sign),
                (ket, coeffs.gamma()),
            ],
        )
    }
}

fn party_letter(party: usize) -> char {
    (b'a' + party as u8) as char
}

/// `a<copy>`, `b<copy>`, ... for `parties` parties.
pub fn party_modes(parties: usize, copy: u8) -> Vec<ModeLabel> {
    (0..parties)
        .map(|i| ModeLabel::new(format!("{}{copy}", party_letter(i))).expect("nonempty label"))
        .collect()
}

fn party_probe(party: usize) -> ProbeId {
    ProbeId::new(party_letter(party).to_ascii_uppercase().to_string()).expect("nonempty id")
}

fn check_parties(parties: usize) -> Result<()> {
    if !(2..=MAX_PARTIES).contains(&parties) {
        return Err(DistillError::InvalidParties(parties));
    }
    Ok(())
}

fn maximal_form(form: ComponentForm, parties: usize) -> Result<PureState> {
    form.state(&Coefficients::maximal(), party_modes(parties, 1))
}

/// `|φ⁺⟩` on `(a1, b1)`.
pub fn bell_target() -> PureState {
    maximal_form(ComponentForm::PHI_PLUS, 2).expect("valid form")
}

/// `(|H…H⟩ + |V…V⟩)/√2` on `a1, b1, ...`.
pub fn ghz_target(parties: usize) -> Result<PureState> {
    check_parties(parties)?;
    maximal_form(ComponentForm::PHI_PLUS, parties)
}

fn component_forms(protocol: Protocol, parties: usize) -> [ComponentForm; 2] {
    match protocol {
        Protocol::BitFlip => [ComponentForm::PHI_PLUS, ComponentForm::psi(1)],
        Protocol::PhaseFlip => [ComponentForm::PHI_PLUS, ComponentForm::PHI_MINUS],
        Protocol::Ghz => [ComponentForm::PHI_PLUS, ComponentForm::psi(parties - 1)],
    }
}

fn parties_of(protocol: Protocol, params: &ProtocolParams) -> usize {
    match protocol {
        Protocol::Ghz => params.parties,
        _ => 2,
    }
}

/// The noisy starting ensemble of `protocol`:
/// `F·|Φ⁺⟩⟨Φ⁺| + (1−F)·|Ψ⁺⟩⟨Ψ⁺|` for bit-flip noise,
/// `F·|Φ⁺⟩⟨Φ⁺| + (1−F)·|Φ⁻⟩⟨Φ⁻|` for phase-flip noise,
/// and the GHZ analogue with the last photon flipped in `|Ψ⁺_N⟩`.
pub fn initial_ensemble(protocol: Protocol, params: &ProtocolParams) -> Result<Ensemble> {
    let parties = parties_of(protocol, params);
    let [good, bad] = component_forms(protocol, parties);
    let modes = party_modes(parties, 1);
    crate::state::make_rank2_mixture(
        params.fidelity,
        good.state(&params.coefficients, modes.clone())?,
        bad.state(&params.coefficients, modes)?,
    )
}

/// The state a successful branch of `protocol` should approach.
pub fn target_state(protocol: Protocol, parties: usize) -> Result<PureState> {
    match protocol {
        Protocol::Ghz => ghz_target(parties),
        _ => Ok(bell_target()),
    }
}

fn expect_modes(rho: &Ensemble, expected: &[ModeLabel]) -> Result<()> {
    if rho.modes() != expected {
        return Err(DistillError::ModeMismatch {
            left: mode_names(expected),
            right: mode_names(rho.modes()),
        });
    }
    Ok(())
}

/// Every member must be `x|k⟩ + y|k̄⟩` for some ket `k` (one of `x, y` may vanish).
fn check_complement_forms(rho: &Ensemble) -> Result<()> {
    if rho.len() > 2 {
        return Err(DistillError::MalformedEnsemble(format!(
            "expected at most 2 members, found {}",
            rho.len()
        )));
    }
    for (i, (_, s)) in rho.members().iter().enumerate() {
        let kets: Vec<&BasisKet> = s.amplitudes().map(|(k, _)| k).collect();
        let ok = match kets.as_slice() {
            [_] => true,
            [a, b] => a.complement() == **b,
            _ => false,
        };
        if !ok {
            return Err(DistillError::MalformedEnsemble(format!(
                "member {i} is not of the form x|k> + y|k-bar>: {s}"
            )));
        }
    }
    Ok(())
}

/// Every member must match one of `forms` with coefficients concentrated `k` times.
fn check_round_forms(
    rho: &Ensemble,
    base: &Coefficients,
    k: usize,
    forms: &[ComponentForm],
) -> Result<()> {
    if rho.len() > 2 {
        return Err(DistillError::MalformedEnsemble(format!(
            "expected at most 2 members, found {}",
            rho.len()
        )));
    }
    let coeffs = base.concentrated(k);
    let expected = forms
        .iter()
        .map(|f| f.state(&coeffs, rho.modes().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    for (i, (_, s)) in rho.members().iter().enumerate() {
        let mut best = 0.0f64;
        for e in &expected {
            best = best.max(e.inner(s)?.norm());
        }
        let mismatch = 1.0 - best;
        if mismatch > FORM_TOLERANCE {
            return Err(DistillError::CoefficientMismatch {
                member: i,
                round: k,
                mismatch,
            });
        }
    }
    Ok(())
}

/// Reads every probe in order; returns `(classes, probability, photons)`.
fn read_probes(
    state: TaggedState,
    probes: &[ProbeId],
) -> Result<Vec<(Vec<ShiftClass>, f64, PureState)>> {
    let mut partial = vec![(Vec::new(), 1.0, state)];
    for probe in probes {
        let mut next = Vec::new();
        for (classes, p, s) in partial {
            for out in s.x_quadrature_measure(probe)? {
                let mut c: Vec<ShiftClass> = classes.clone();
                c.push(out.class);
                next.push((c, p * out.probability, out.state));
            }
        }
        partial = next;
    }
    partial
        .into_iter()
        .map(|(c, p, s)| Ok((c, p, s.into_pure()?)))
        .collect()
}

/// Measures `modes` in the `|±⟩` basis, then phase-flips `target` when an
/// odd number of outcomes were minus.
fn measure_and_correct(
    state: PureState,
    modes: &[ModeLabel],
    target: &ModeLabel,
) -> Result<Vec<(Vec<Pm>, f64, PureState)>> {
    let mut partial = vec![(Vec::new(), 1.0, state)];
    for mode in modes {
        let mut next = Vec::new();
        for (pms, p, s) in partial {
            for out in s.measure_pm(mode)? {
                let mut r: Vec<Pm> = pms.clone();
                r.push(out.outcome);
                next.push((r, p * out.probability, out.state));
            }
        }
        partial = next;
    }
    partial
        .into_iter()
        .map(|(pms, p, s)| {
            let minus = pms.iter().filter(|&&r| r == Pm::Minus).count();
            let s = if minus % 2 == 1 {
                s.apply_phase_flip(target)?
            } else {
                s
            };
            Ok((pms, p, s))
        })
        .collect()
}

fn classify(classes: &[ShiftClass]) -> Disposition {
    if classes.iter().all(|&c| c == ShiftClass::ZERO) {
        Disposition::Success
    } else if classes.iter().all(|&c| c == ShiftClass::TWO) {
        Disposition::Recyclable
    } else {
        Disposition::Discard
    }
}

#[derive(Default)]
struct Pending {
    disposition: Option<Disposition>,
    probability: f64,
    members: Vec<(f64, PureState)>,
    contributions: Vec<Contribution>,
}

/// Collects branch pieces from all member pairings under one key.
struct BranchTable {
    probes: Vec<ProbeId>,
    measured: Vec<ModeLabel>,
    rows: BTreeMap<(Vec<ShiftClass>, Vec<Pm>), Pending>,
}

impl BranchTable {
    fn new(probes: Vec<ProbeId>, measured: Vec<ModeLabel>) -> Self {
        Self {
            probes,
            measured,
            rows: BTreeMap::new(),
        }
    }

    fn add(
        &mut self,
        classes: Vec<ShiftClass>,
        pms: Vec<Pm>,
        disposition: Disposition,
        probability: f64,
        state: PureState,
        components: Vec<usize>,
    ) {
        let row = self.rows.entry((classes, pms)).or_default();
        row.disposition = Some(disposition);
        row.probability += probability;
        row.members.push((probability, state));
        row.contributions.push(Contribution {
            components,
            probability,
        });
    }

    fn finish(self) -> Result<Vec<BranchOutcome>> {
        let mut out = Vec::with_capacity(self.rows.len());
        for ((classes, pms), row) in self.rows {
            out.push(BranchOutcome {
                shift_classes: self.probes.iter().cloned().zip(classes).collect(),
                pm_results: self.measured.iter().cloned().zip(pms).collect(),
                probability: row.probability,
                post: Ensemble::from_unnormalized(row.members)?,
                disposition: row.disposition.expect("set on insert"),
                contributions: row.contributions,
            });
        }
        Ok(out)
    }
}

/// Two copies of an N-party mixture: bit-flip every photon of copy 2, check
/// each party's two photons on its own probe, keep all-0 (success) and all-2
/// (recyclable) patterns, measure copy 2 in `|±⟩` with feedforward onto
/// `first[feedforward]`.
fn two_copy_round(
    rho: &Ensemble,
    parties: usize,
    feedforward: usize,
) -> Result<Vec<BranchOutcome>> {
    let first = party_modes(parties, 1);
    let second = party_modes(parties, 2);
    let probes: Vec<ProbeId> = (0..parties).map(party_probe).collect();
    let mut table = BranchTable::new(probes.clone(), second.clone());

    for (i, (wi, si)) in rho.members().iter().enumerate() {
        for (j, (wj, sj)) in rho.members().iter().enumerate() {
            let mut joint = si.tensor(&sj.relabeled(second.clone())?)?;
            for mode in &second {
                joint = joint.apply_bit_flip(mode)?;
            }
            let mut tagged = TaggedState::from(&joint);
            for (p, probe) in probes.iter().enumerate() {
                tagged = tagged
                    .attach_probe(probe.clone())?
                    .parity_check(&first[p], &second[p], probe)?;
            }
            let weight = wi * wj;
            for (classes, p_class, photons) in read_probes(tagged, &probes)? {
                let disposition = classify(&classes);
                if disposition == Disposition::Discard {
                    table.add(
                        classes,
                        Vec::new(),
                        disposition,
                        weight * p_class,
                        photons,
                        vec![i, j],
                    );
                    continue;
                }
                for (pms, p_pm, post) in measure_and_correct(photons, &second, &first[feedforward])?
                {
                    table.add(
                        classes.clone(),
                        pms,
                        disposition,
                        weight * p_class * p_pm,
                        post,
                        vec![i, j],
                    );
                }
            }
        }
    }
    table.finish()
}

/// Parity-checks `check` against a bit-flipped ancilla photon on one probe;
/// class 0 succeeds, class 2 is recyclable. The ancilla is then measured in
/// `|±⟩` with feedforward onto the first mode.
fn ancilla_round(
    rho: &Ensemble,
    ancilla: &AncillaSpec,
    check: usize,
) -> Result<Vec<BranchOutcome>> {
    let modes = rho.modes().to_vec();
    let anc = ModeLabel::new(ANCILLA_MODE)?;
    let probe = party_probe(check);
    let photon = ancilla.state(anc.clone())?;
    let mut table = BranchTable::new(vec![probe.clone()], vec![anc.clone()]);

    for (i, (w, s)) in rho.members().iter().enumerate() {
        let joint = s.tensor(&photon)?.apply_bit_flip(&anc)?;
        let tagged = TaggedState::from(&joint)
            .attach_probe(probe.clone())?
            .parity_check(&modes[check], &anc, &probe)?;
        for (classes, p_class, photons) in read_probes(tagged, std::slice::from_ref(&probe))? {
            let disposition = classify(&classes);
            if disposition == Disposition::Discard {
                table.add(
                    classes,
                    Vec::new(),
                    disposition,
                    w * p_class,
                    photons,
                    vec![i],
                );
                continue;
            }
            for (pms, p_pm, post) in
                measure_and_correct(photons, std::slice::from_ref(&anc), &modes[0])?
            {
                table.add(
                    classes.clone(),
                    pms,
                    disposition,
                    w * p_class * p_pm,
                    post,
                    vec![i],
                );
            }
        }
    }
    table.finish()
}

/// First photon that carries H in the `c₁` term of every allowed form; the
/// ancilla is compared against it.
fn ancilla_check_index(forms: &[ComponentForm]) -> usize {
    (0..)
        .find(|i| forms.iter().all(|f| f.flipped != Some(*i)))
        .expect("unbounded search")
}

/// First bit-flip round on `F|Φ⁺⟩⟨Φ⁺| + (1−F)|Ψ⁺⟩⟨Ψ⁺|` over `(a1, b1)`.
///
/// A second copy on `(a2, b2)` is fabricated from `rho`, bit-flipped, and
/// checked pairwise (`a1,a2` on probe A, `b1,b2` on probe B). Feedforward acts
/// on `b1`.
pub fn bitflip_round(rho: &Ensemble) -> Result<Vec<BranchOutcome>> {
    expect_modes(rho, &party_modes(2, 1))?;
    check_complement_forms(rho)?;
    two_copy_round(rho, 2, 1)
}

/// Round `k + 1` of the bit-flip protocol on a recycled mixture whose
/// components are `∝ γ^(2^k)|HH⟩ + δ^(2^k)|VV⟩` and `∝ γ^(2^k)|HV⟩ + δ^(2^k)|VH⟩`.
///
/// Alice checks `a1` against the [`AncillaSpec`] photon for round `k`.
pub fn recycle_bitflip(
    rho_k: &Ensemble,
    k: usize,
    base: &Coefficients,
) -> Result<Vec<BranchOutcome>> {
    if k == 0 {
        return Err(DistillError::InvalidRound(k));
    }
    expect_modes(rho_k, &party_modes(2, 1))?;
    let forms = component_forms(Protocol::BitFlip, 2);
    check_round_forms(rho_k, base, k, &forms)?;
    ancilla_round(
        rho_k,
        &AncillaSpec::new(base, k),
        ancilla_check_index(&forms),
    )
}

/// First phase-flip round on `F|Φ⁺⟩⟨Φ⁺| + (1−F)|Φ⁻⟩⟨Φ⁻|` with a fresh
/// `γ|H⟩ + δ|V⟩` ancilla. Success leaves `F|φ⁺⟩⟨φ⁺| + (1−F)|φ⁻⟩⟨φ⁻|`.
pub fn phaseflip_round(rho_p: &Ensemble, base: &Coefficients) -> Result<Vec<BranchOutcome>> {
    phaseflip_recycle_inner(rho_p, 0, base)
}

/// Round `k + 1` of the phase-flip protocol on the mixture recycled `k` times.
pub fn phaseflip_recycle(
    rho: &Ensemble,
    k: usize,
    base: &Coefficients,
) -> Result<Vec<BranchOutcome>> {
    if k == 0 {
        return Err(DistillError::InvalidRound(k));
    }
    phaseflip_recycle_inner(rho, k, base)
}

fn phaseflip_recycle_inner(
    rho: &Ensemble,
    k: usize,
    base: &Coefficients,
) -> Result<Vec<BranchOutcome>> {
    expect_modes(rho, &party_modes(2, 1))?;
    let forms = component_forms(Protocol::PhaseFlip, 2);
    check_round_forms(rho, base, k, &forms)?;
    ancilla_round(rho, &AncillaSpec::new(base, k), ancilla_check_index(&forms))
}

/// Hadamard on both photons of every member.
///
/// `|φ⁺⟩` is invariant and `|φ⁻⟩` maps to `|ψ⁺⟩`, so a phase-flip mixture
/// `F|φ⁺⟩⟨φ⁺| + (1−F)|φ⁻⟩⟨φ⁻|` comes out in bit-flip form
/// `F|φ⁺⟩⟨φ⁺| + (1−F)|ψ⁺⟩⟨ψ⁺|`.
pub fn hadamard_convert(e: &Ensemble) -> Result<Ensemble> {
    if e.modes().len() != 2 {
        return Err(DistillError::MalformedEnsemble(format!(
            "expected a two-mode ensemble, found {} modes",
            e.modes().len()
        )));
    }
    let modes = e.modes().to_vec();
    e.map_states(|s| {
        modes
            .iter()
            .try_fold(s.clone(), |acc, m| acc.apply_hadamard(m))
    })
}

/// First round of GHZ distillation on `N = rho_n.modes().len()` parties.
/// Feedforward acts on `a1`.
pub fn ghz_round(rho_n: &Ensemble) -> Result<Vec<BranchOutcome>> {
    let parties = rho_n.modes().len();
    check_parties(parties)?;
    expect_modes(rho_n, &party_modes(parties, 1))?;
    check_complement_forms(rho_n)?;
    two_copy_round(rho_n, parties, 0)
}

/// Round `k + 1` of GHZ distillation. The ancilla is checked against `a1`.
pub fn ghz_recycle(rho_k: &Ensemble, k: usize, base: &Coefficients) -> Result<Vec<BranchOutcome>> {
    if k == 0 {
        return Err(DistillError::InvalidRound(k));
    }
    let parties = rho_k.modes().len();
    check_parties(parties)?;
    expect_modes(rho_k, &party_modes(parties, 1))?;
    let forms = component_forms(Protocol::Ghz, parties);
    check_round_forms(rho_k, base, k, &forms)?;
    ancilla_round(
        rho_k,
        &AncillaSpec::new(base, k),
        ancilla_check_index(&forms),
    )
}

/// One recyclable ensemble waiting for the next round, with the
/// unconditional probability of having reached it.
#[derive(Clone, Debug)]
pub struct FrontierEntry {
    pub reach: f64,
    pub ensemble: Ensemble,
}

/// Enumerated outcome of one round over the whole frontier.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub round: usize,
    pub frontier: Vec<FrontierEntry>,
    /// `branches[e]` are the branches of `frontier[e]`, conditional on reaching it.
    pub branches: Vec<Vec<BranchOutcome>>,
    /// Unconditional success probability of this round.
    pub success_probability: f64,
    /// Success-weighted fidelity against the protocol target, if any branch succeeded.
    pub success_fidelity: Option<f64>,
    pub recyclable_probability: f64,
}

impl RoundRecord {
    pub fn reach_probability(&self) -> f64 {
        self.frontier.iter().map(|e| e.reach).sum()
    }

    /// Success probability given that this round was reached.
    pub fn conditional_success(&self) -> f64 {
        let reach = self.reach_probability();
        if reach > 0.0 {
            self.success_probability / reach
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedRun {
    pub protocol: Protocol,
    pub params: ProtocolParams,
    pub rounds: Vec<RoundRecord>,
}

impl SimulatedRun {
    pub fn total_success(&self) -> f64 {
        self.rounds.iter().map(|r| r.success_probability).sum()
    }

    /// Fidelity of everything that succeeded in the first `n` rounds.
    pub fn output_fidelity_through(&self, n: usize) -> Option<f64> {
        let (mut p, mut pf) = (0.0, 0.0);
        for r in self.rounds.iter().take(n) {
            if let Some(f) = r.success_fidelity {
                p += r.success_probability;
                pf += r.success_probability * f;
            }
        }
        (p > 0.0).then(|| pf / p)
    }
}

fn run_round(
    protocol: Protocol,
    round: usize,
    rho: &Ensemble,
    base: &Coefficients,
) -> Result<Vec<BranchOutcome>> {
    match (protocol, round) {
        (Protocol::BitFlip, 1) => bitflip_round(rho),
        (Protocol::BitFlip, r) => recycle_bitflip(rho, r - 1, base),
        (Protocol::PhaseFlip, 1) => phaseflip_round(rho, base),
        (Protocol::PhaseFlip, r) => phaseflip_recycle(rho, r - 1, base),
        (Protocol::Ghz, 1) => ghz_round(rho),
        (Protocol::Ghz, r) => ghz_recycle(rho, r - 1, base),
    }
}

const MERGE_TOLERANCE: f64 = NORM_TOLERANCE;

fn push_frontier(frontier: &mut Vec<FrontierEntry>, reach: f64, ensemble: Ensemble) {
    if let Some(e) = frontier
        .iter_mut()
        .find(|e| e.ensemble.approx_eq(&ensemble, MERGE_TOLERANCE))
    {
        e.reach += reach;
    } else {
        frontier.push(FrontierEntry { reach, ensemble });
    }
}

/// Enumerates `params.max_rounds` rounds of `protocol`, feeding every
/// recyclable branch into the next round. Recyclable ensembles that agree up
/// to member phases are merged. No closed-form expression is consulted.
pub fn simulate(protocol: Protocol, params: &ProtocolParams) -> Result<SimulatedRun> {
    let parties = parties_of(protocol, params);
    let target = target_state(protocol, parties)?;
    let base = params.coefficients;
    let mut frontier = vec![FrontierEntry {
        reach: 1.0,
        ensemble: initial_ensemble(protocol, params)?,
    }];
    let mut rounds = Vec::with_capacity(params.max_rounds);

    for round in 1..=params.max_rounds {
        let mut next = Vec::new();
        let mut all_branches = Vec::with_capacity(frontier.len());
        let (mut success, mut success_fid, mut recyclable) = (0.0, 0.0, 0.0);
        for entry in &frontier {
            let branches = run_round(protocol, round, &entry.ensemble, &base)?;
            for b in &branches {
                let p = entry.reach * b.probability;
                match b.disposition {
                    Disposition::Success => {
                        success += p;
                        success_fid += p * b.post.fidelity_against(&target)?;
                    }
                    Disposition::Recyclable => {
                        recyclable += p;
                        push_frontier(&mut next, p, b.post.clone());
                    }
                    Disposition::Discard => {}
                }
            }
            all_branches.push(branches);
        }
        rounds.push(RoundRecord {
            round,
            frontier: std::mem::take(&mut frontier),
            branches: all_branches,
            success_probability: success,
            success_fidelity: (success > 0.0).then(|| success_fid / success),
            recyclable_probability: recyclable,
        });
        frontier = next;
    }

    Ok(SimulatedRun {
        protocol,
        params: params.clone(),
        rounds,
    })
}

/// [`simulate`] followed by the side-by-side comparison with the closed forms.
pub fn iterate(protocol: Protocol, params: &ProtocolParams) -> Result<IterationReport> {
    let run = simulate(protocol, params)?;
    analytics::compare(&run, &analytics::ClosedForms)
}

/// Amplitude ratio helper used by diagnostics: the two stored amplitudes of a
/// complement-form member, ordered as `(c₁, c₂)` for `form`.
pub fn form_coefficients(state: &PureState, form: ComponentForm) -> Result<(C64, C64)> {
    let n = state.modes().len();
    let mut pols = vec![Polarization::H; n];
    if let Some(i) = form.flipped {
        pols[i] = Polarization::V;
    }
    let ket = BasisKet::new(pols);
    let sign = if form.negated { -1.0 } else { 1.0 };
    Ok((
        state.amplitude(&ket),
        state.amplitude(&ket.complement()) * sign,
    ))
}

/// The two component forms used by `protocol`, good component first.
pub fn forms_of(protocol: Protocol, parties: usize) -> [ComponentForm; 2] {
    component_forms(protocol, parties)
}
