//! Sparse polarization states over labeled spatial modes.
//!
//! A [`PureState`] stores only the basis kets with nonzero amplitude, keyed
//! by the polarization of every mode in the state's ordered mode list. An
//! [`Ensemble`] is a probability-weighted list of pure states sharing one mode
//! list; it stands in for a density matrix everywhere in this crate.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;

use crate::error::{DistillError, Result};

/// Amplitudes with modulus below this are dropped.
pub const PRUNE_TOLERANCE: f64 = 1e-15;
/// Allowed deviation of a squared norm (or weight sum) from one.
pub const NORM_TOLERANCE: f64 = 1e-12;

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarization {
    H,
    V,
}

impl Polarization {
    pub fn flipped(self) -> Self {
        match self {
            Polarization::H => Polarization::V,
            Polarization::V => Polarization::H,
        }
    }
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarization::H => write!(f, "H"),
            Polarization::V => write!(f, "V"),
        }
    }
}

/// Name of a spatial mode, e.g. `a1`, `b2`, `anc`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModeLabel(String);

impl ModeLabel {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(DistillError::EmptyLabel);
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for ModeLabel {
    type Err = DistillError;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Polarization of every mode of the owning state, in mode-list order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasisKet(Vec<Polarization>);

impl BasisKet {
    pub fn new(polarizations: Vec<Polarization>) -> Self {
        Self(polarizations)
    }

    pub fn polarizations(&self) -> &[Polarization] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> Polarization {
        self.0[index]
    }

    /// The ket with every polarization flipped.
    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|p| p.flipped()).collect())
    }

    pub(crate) fn with(&self, index: usize, value: Polarization) -> Self {
        let mut pols = self.0.clone();
        pols[index] = value;
        Self(pols)
    }

    pub(crate) fn without(&self, index: usize) -> Self {
        let mut pols = self.0.clone();
        pols.remove(index);
        Self(pols)
    }

    fn concat(&self, other: &BasisKet) -> Self {
        let mut pols = self.0.clone();
        pols.extend_from_slice(&other.0);
        Self(pols)
    }
}

impl FromStr for BasisKet {
    type Err = String;

    /// Parses strings such as `"HVVH"`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.chars()
            .map(|c| match c {
                'H' | 'h' => Ok(Polarization::H),
                'V' | 'v' => Ok(Polarization::V),
                other => Err(format!("invalid polarization {other:?}")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Self)
    }
}

impl fmt::Display for BasisKet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.0 {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// Outcome of a projective measurement in the `|±⟩ = (|H⟩ ± |V⟩)/√2` basis.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pm {
    Plus,
    Minus,
}

impl Pm {
    /// ⟨±|p⟩ · √2.
    fn overlap_sign(self, p: Polarization) -> f64 {
        match (self, p) {
            (Pm::Minus, Polarization::V) => -1.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Pm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pm::Plus => write!(f, "+"),
            Pm::Minus => write!(f, "-"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PmOutcome {
    pub outcome: Pm,
    pub probability: f64,
    /// Renormalized post-measurement state with the measured mode removed.
    pub state: PureState,
}

pub(crate) fn check_unique_modes(modes: &[ModeLabel]) -> Result<()> {
    for (i, m) in modes.iter().enumerate() {
        if modes[..i].contains(m) {
            return Err(DistillError::DuplicateMode(m.to_string()));
        }
    }
    Ok(())
}

pub(crate) fn mode_names(modes: &[ModeLabel]) -> Vec<String> {
    modes.iter().map(|m| m.to_string()).collect()
}

pub(crate) fn accumulate<K: Ord>(map: &mut BTreeMap<K, C64>, key: K, amp: C64) {
    *map.entry(key).or_insert(C64::new(0.0, 0.0)) += amp;
}

pub(crate) fn prune<K: Ord>(map: &mut BTreeMap<K, C64>) {
    map.retain(|_, a| a.norm() >= PRUNE_TOLERANCE);
}

/// A normalized pure state of a few photons.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    modes: Vec<ModeLabel>,
    amplitudes: BTreeMap<BasisKet, C64>,
}

impl PureState {
    /// Builds a state from explicit terms; duplicate kets are summed.
    /// Fails unless the result is normalized to [`NORM_TOLERANCE`].
    pub fn from_terms<I>(modes: Vec<ModeLabel>, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (BasisKet, C64)>,
    {
        let state = Self::raw(modes, terms)?;
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(DistillError::StateNotNormalized(norm));
        }
        Ok(state)
    }

    /// Like [`PureState::from_terms`] but rescales the terms to unit norm.
    pub fn normalized<I>(modes: Vec<ModeLabel>, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (BasisKet, C64)>,
    {
        let mut state = Self::raw(modes, terms)?;
        let norm = state.norm_sqr();
        if norm < PRUNE_TOLERANCE * PRUNE_TOLERANCE {
            return Err(DistillError::StateNotNormalized(norm));
        }
        state.rescale(1.0 / norm.sqrt());
        Ok(state)
    }

    /// A single product ket.
    pub fn product(modes: Vec<ModeLabel>, polarizations: Vec<Polarization>) -> Result<Self> {
        Self::from_terms(modes, [(BasisKet::new(polarizations), C64::new(1.0, 0.0))])
    }

    /// The zero-photon state left after every mode has been measured.
    pub fn vacuum() -> Self {
        let mut amplitudes = BTreeMap::new();
        amplitudes.insert(BasisKet::new(Vec::new()), C64::new(1.0, 0.0));
        Self {
            modes: Vec::new(),
            amplitudes,
        }
    }

    fn raw<I>(modes: Vec<ModeLabel>, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (BasisKet, C64)>,
    {
        check_unique_modes(&modes)?;
        let mut amplitudes = BTreeMap::new();
        for (ket, amp) in terms {
            if ket.len() != modes.len() {
                return Err(DistillError::KetLength {
                    expected: modes.len(),
                    found: ket.len(),
                });
            }
            accumulate(&mut amplitudes, ket, amp);
        }
        prune(&mut amplitudes);
        Ok(Self { modes, amplitudes })
    }

    /// Internal constructor for maps already known to be consistent.
    pub(crate) fn from_parts(
        modes: Vec<ModeLabel>,
        mut amplitudes: BTreeMap<BasisKet, C64>,
    ) -> Self {
        prune(&mut amplitudes);
        Self { modes, amplitudes }
    }

    fn rescale(&mut self, factor: f64) {
        for amp in self.amplitudes.values_mut() {
            *amp *= factor;
        }
    }

    pub fn modes(&self) -> &[ModeLabel] {
        &self.modes
    }

    pub fn amplitudes(&self) -> impl Iterator<Item = (&BasisKet, &C64)> {
        self.amplitudes.iter()
    }

    pub fn amplitude(&self, ket: &BasisKet) -> C64 {
        self.amplitudes
            .get(ket)
            .copied()
            .unwrap_or(C64::new(0.0, 0.0))
    }

    /// Number of stored (nonzero) terms.
    pub fn term_count(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn mode_index(&self, mode: &ModeLabel) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m == mode)
            .ok_or_else(|| DistillError::UnknownMode(mode.to_string()))
    }

    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let mut modes = self.modes.clone();
        modes.extend(other.modes.iter().cloned());
        check_unique_modes(&modes)?;
        let mut amplitudes = BTreeMap::new();
        for (k1, a1) in &self.amplitudes {
            for (k2, a2) in &other.amplitudes {
                accumulate(&mut amplitudes, k1.concat(k2), a1 * a2);
            }
        }
        Ok(Self::from_parts(modes, amplitudes))
    }

    /// Swaps H and V on one mode (half-wave plate).
    pub fn apply_bit_flip(&self, mode: &ModeLabel) -> Result<PureState> {
        let idx = self.mode_index(mode)?;
        let amplitudes = self
            .amplitudes
            .iter()
            .map(|(k, a)| (k.with(idx, k.get(idx).flipped()), *a))
            .collect();
        Ok(Self::from_parts(self.modes.clone(), amplitudes))
    }

    /// Negates every term with V on `mode`.
    pub fn apply_phase_flip(&self, mode: &ModeLabel) -> Result<PureState> {
        let idx = self.mode_index(mode)?;
        let amplitudes = self
            .amplitudes
            .iter()
            .map(|(k, a)| match k.get(idx) {
                Polarization::H => (k.clone(), *a),
                Polarization::V => (k.clone(), -*a),
            })
            .collect();
        Ok(Self::from_parts(self.modes.clone(), amplitudes))
    }

    /// `|H⟩ → (|H⟩+|V⟩)/√2`, `|V⟩ → (|H⟩−|V⟩)/√2` on one mode.
    pub fn apply_hadamard(&self, mode: &ModeLabel) -> Result<PureState> {
        let idx = self.mode_index(mode)?;
        let mut amplitudes = BTreeMap::new();
        for (k, a) in &self.amplitudes {
            let scaled = a * FRAC_1_SQRT_2;
            let sign = match k.get(idx) {
                Polarization::H => 1.0,
                Polarization::V => -1.0,
            };
            accumulate(&mut amplitudes, k.with(idx, Polarization::H), scaled);
            accumulate(&mut amplitudes, k.with(idx, Polarization::V), scaled * sign);
        }
        Ok(Self::from_parts(self.modes.clone(), amplitudes))
    }

    /// Projective `|±⟩` measurement of one mode; the photon is consumed.
    pub fn measure_pm(&self, mode: &ModeLabel) -> Result<Vec<PmOutcome>> {
        let idx = self.mode_index(mode)?;
        let mut modes = self.modes.clone();
        modes.remove(idx);
        let mut outcomes = Vec::with_capacity(2);
        for outcome in [Pm::Plus, Pm::Minus] {
            let mut amplitudes = BTreeMap::new();
            for (k, a) in &self.amplitudes {
                let factor = outcome.overlap_sign(k.get(idx)) * FRAC_1_SQRT_2;
                accumulate(&mut amplitudes, k.without(idx), a * factor);
            }
            let mut state = Self::from_parts(modes.clone(), amplitudes);
            let probability = state.norm_sqr();
            if probability > PRUNE_TOLERANCE {
                state.rescale(1.0 / probability.sqrt());
                outcomes.push(PmOutcome {
                    outcome,
                    probability,
                    state,
                });
            }
        }
        Ok(outcomes)
    }

    /// ⟨self|other⟩ for states on identical mode lists.
    pub fn inner(&self, other: &PureState) -> Result<C64> {
        if self.modes != other.modes {
            return Err(DistillError::ModeMismatch {
                left: mode_names(&self.modes),
                right: mode_names(&other.modes),
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .filter_map(|(k, a)| other.amplitudes.get(k).map(|b| a.conj() * b))
            .sum())
    }

    /// Same amplitudes under new mode names (positional).
    pub fn relabeled(&self, modes: Vec<ModeLabel>) -> Result<PureState> {
        if modes.len() != self.modes.len() {
            return Err(DistillError::ModeMismatch {
                left: mode_names(&self.modes),
                right: mode_names(&modes),
            });
        }
        check_unique_modes(&modes)?;
        Ok(Self {
            modes,
            amplitudes: self.amplitudes.clone(),
        })
    }

    /// Permutes the mode list into `order`, which must be a rearrangement of it.
    pub fn reordered(&self, order: &[ModeLabel]) -> Result<PureState> {
        let mismatch = || DistillError::ModeMismatch {
            left: mode_names(&self.modes),
            right: mode_names(order),
        };
        if order.len() != self.modes.len() {
            return Err(mismatch());
        }
        check_unique_modes(order)?;
        let positions = order
            .iter()
            .map(|m| self.mode_index(m).map_err(|_| mismatch()))
            .collect::<Result<Vec<_>>>()?;
        let amplitudes = self
            .amplitudes
            .iter()
            .map(|(k, a)| {
                (
                    BasisKet::new(positions.iter().map(|&i| k.get(i)).collect()),
                    *a,
                )
            })
            .collect();
        Ok(Self {
            modes: order.to_vec(),
            amplitudes,
        })
    }

    pub fn with_global_phase(&self, phase: f64) -> PureState {
        let factor = C64::from_polar(1.0, phase);
        Self {
            modes: self.modes.clone(),
            amplitudes: self
                .amplitudes
                .iter()
                .map(|(k, a)| (k.clone(), a * factor))
                .collect(),
        }
    }
}

impl fmt::Display for PureState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let modes = mode_names(&self.modes).join(",");
        let mut first = true;
        for (k, a) in &self.amplitudes {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            if a.im.abs() < PRUNE_TOLERANCE {
                write!(f, "{:.6}|{k}>", a.re)?;
            } else {
                write!(f, "({:.6}{:+.6}i)|{k}>", a.re, a.im)?;
            }
        }
        write!(f, " [{modes}]")
    }
}

/// Normalized pair coefficients `(γ, δ)` of a less-entangled state.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Coefficients {
    gamma: C64,
    delta: C64,
}

impl Coefficients {
    pub fn new(gamma: C64, delta: C64) -> Result<Self> {
        let norm = gamma.norm_sqr() + delta.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(DistillError::NotNormalized(norm));
        }
        Ok(Self { gamma, delta })
    }

    /// Real `γ ∈ [0, 1]` with `δ = √(1 − γ²)`.
    pub fn from_real_gamma(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(DistillError::InvalidProbability(gamma));
        }
        let delta = (1.0 - gamma * gamma).max(0.0).sqrt();
        Self::new(C64::new(gamma, 0.0), C64::new(delta, 0.0))
    }

    /// `γ = δ = 1/√2`.
    pub fn maximal() -> Self {
        Self {
            gamma: C64::new(FRAC_1_SQRT_2, 0.0),
            delta: C64::new(FRAC_1_SQRT_2, 0.0),
        }
    }

    pub fn gamma(&self) -> C64 {
        self.gamma
    }

    pub fn delta(&self) -> C64 {
        self.delta
    }

    pub fn swapped(&self) -> Self {
        Self {
            gamma: self.delta,
            delta: self.gamma,
        }
    }

    /// `(γ^(2^k), δ^(2^k))` renormalized. Squaring is renormalized at every
    /// step so that deep rounds do not underflow before the ratio does.
    pub fn concentrated(&self, k: usize) -> Self {
        let (mut g, mut d) = (self.gamma, self.delta);
        for _ in 0..k {
            g = g * g;
            d = d * d;
            let norm = (g.norm_sqr() + d.norm_sqr()).sqrt();
            g /= norm;
            d /= norm;
        }
        Self { gamma: g, delta: d }
    }
}

/// `γ|HH⟩ + δ|VV⟩` when `correlated`, else `γ|HV⟩ + δ|VH⟩`.
pub fn make_less_entangled_pair(
    gamma: C64,
    delta: C64,
    mode1: ModeLabel,
    mode2: ModeLabel,
    correlated: bool,
) -> Result<PureState> {
    let coeffs = Coefficients::new(gamma, delta)?;
    pair_state(&coeffs, mode1, mode2, correlated)
}

pub(crate) fn pair_state(
    coeffs: &Coefficients,
    mode1: ModeLabel,
    mode2: ModeLabel,
    correlated: bool,
) -> Result<PureState> {
    use Polarization::{H, V};
    let (first, second) = if correlated {
        (vec![H, H], vec![V, V])
    } else {
        (vec![H, V], vec![V, H])
    };
    PureState::from_terms(
        vec![mode1, mode2],
        [
            (BasisKet::new(first), coeffs.gamma),
            (BasisKet::new(second), coeffs.delta),
        ],
    )
}

/// A probability-weighted list of pure states over a common mode list.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: Vec<(f64, PureState)>,
}

impl Ensemble {
    pub fn new(members: Vec<(f64, PureState)>) -> Result<Self> {
        let Some((_, first)) = members.first() else {
            return Err(DistillError::EmptyEnsemble);
        };
        let modes = first.modes();
        let mut total = 0.0;
        for (w, s) in &members {
            if !(*w > 0.0 && *w <= 1.0 + NORM_TOLERANCE) {
                return Err(DistillError::InvalidProbability(*w));
            }
            if s.modes() != modes {
                return Err(DistillError::ModeMismatch {
                    left: mode_names(modes),
                    right: mode_names(s.modes()),
                });
            }
            total += w;
        }
        if (total - 1.0).abs() > NORM_TOLERANCE {
            return Err(DistillError::WeightsNotNormalized(total));
        }
        Ok(Self { members })
    }

    pub fn pure(state: PureState) -> Self {
        Self {
            members: vec![(1.0, state)],
        }
    }

    /// Rescales positive weights to sum to one.
    pub(crate) fn from_unnormalized(members: Vec<(f64, PureState)>) -> Result<Self> {
        let total: f64 = members.iter().map(|(w, _)| w).sum();
        if total <= 0.0 {
            return Err(DistillError::EmptyEnsemble);
        }
        Self::new(members.into_iter().map(|(w, s)| (w / total, s)).collect())
    }

    pub fn members(&self) -> &[(f64, PureState)] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn modes(&self) -> &[ModeLabel] {
        self.members[0].1.modes()
    }

    /// `Σ w · |⟨target|member⟩|²`.
    pub fn fidelity_against(&self, target: &PureState) -> Result<f64> {
        self.members
            .iter()
            .map(|(w, s)| Ok(w * target.inner(s)?.norm_sqr()))
            .sum()
    }

    pub fn map_states<F>(&self, mut f: F) -> Result<Ensemble>
    where
        F: FnMut(&PureState) -> Result<PureState>,
    {
        let members = self
            .members
            .iter()
            .map(|(w, s)| Ok((*w, f(s)?)))
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(members)
    }

    /// Member-by-member comparison: weights within `tol` and states equal up
    /// to a global phase (`1 − |⟨a|b⟩|² ≤ tol`).
    pub fn approx_eq(&self, other: &Ensemble, tol: f64) -> bool {
        self.members.len() == other.members.len()
            && self
                .members
                .iter()
                .zip(&other.members)
                .all(|((w1, s1), (w2, s2))| {
                    (w1 - w2).abs() <= tol
                        && s1
                            .inner(s2)
                            .map(|ip| 1.0 - ip.norm_sqr() <= tol)
                            .unwrap_or(false)
                })
    }
}

/// `F·|A⟩⟨A| + (1−F)·|B⟩⟨B|`; a zero-weight member is dropped.
pub fn make_rank2_mixture(
    fidelity: f64,
    state_a: PureState,
    state_b: PureState,
) -> Result<Ensemble> {
    if !(0.0..=1.0).contains(&fidelity) {
        return Err(DistillError::InvalidProbability(fidelity));
    }
    if state_a.modes() != state_b.modes() {
        return Err(DistillError::ModeMismatch {
            left: mode_names(state_a.modes()),
            right: mode_names(state_b.modes()),
        });
    }
    let members = [(fidelity, state_a), (1.0 - fidelity, state_b)]
        .into_iter()
        .filter(|(w, _)| *w > 0.0)
        .collect();
    Ensemble::new(members)
}
