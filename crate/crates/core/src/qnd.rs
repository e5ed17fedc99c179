//! Cross-Kerr parity check with coherent probes, tracked symbolically.
//!
//! Every amplitude carries, per probe, the integer `k` of the probe phase
//! `α·e^{ikθ}`. A parity check between two modes leaves `k` unchanged on
//! even-parity kets (`HH`, `VV`), subtracts 2 on `HV` and adds 2 on `VH`.
//! The X-quadrature readout resolves `|k|` only, so `±k` collapse into one
//! [`ShiftClass`] while the relative sign of the amplitudes survives.
//!
//! Discrimination is ideal: classes are exact and distinct classes never
//! overlap (the large-`αθ` limit).

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64 as C64;

use crate::error::{DistillError, Result};
use crate::state::{
    accumulate, check_unique_modes, prune, BasisKet, ModeLabel, Polarization, PureState,
    PRUNE_TOLERANCE,
};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProbeId(String);

impl ProbeId {
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

impl fmt::Display for ProbeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Accumulated phase multiples, one per probe in the owning state's probe order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProbeTag(Vec<i32>);

impl ProbeTag {
    pub fn shifts(&self) -> &[i32] {
        &self.0
    }
}

/// Measured `|k|` of one probe. `0` is "no phase shift".
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ShiftClass(u32);

impl ShiftClass {
    pub const ZERO: ShiftClass = ShiftClass(0);
    pub const TWO: ShiftClass = ShiftClass(2);

    pub fn new(magnitude: u32) -> Self {
        Self(magnitude)
    }

    pub fn magnitude(self) -> u32 {
        self.0
    }
}

impl fmt::Display for ShiftClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug)]
pub struct QuadratureOutcome {
    pub class: ShiftClass,
    pub probability: f64,
    /// Renormalized state with the measured probe removed.
    pub state: TaggedState,
}

/// Photon polarization state entangled with coherent-probe phase tags.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedState {
    modes: Vec<ModeLabel>,
    probes: Vec<ProbeId>,
    amplitudes: BTreeMap<(BasisKet, ProbeTag), C64>,
}

impl From<&PureState> for TaggedState {
    fn from(state: &PureState) -> Self {
        Self {
            modes: state.modes().to_vec(),
            probes: Vec::new(),
            amplitudes: state
                .amplitudes()
                .map(|(k, a)| ((k.clone(), ProbeTag(Vec::new())), *a))
                .collect(),
        }
    }
}

impl From<PureState> for TaggedState {
    fn from(state: PureState) -> Self {
        Self::from(&state)
    }
}

/// Couples a fresh probe `|α⟩` to `state`; every term starts with shift 0.
pub fn attach_probe(state: impl Into<TaggedState>, probe: ProbeId) -> Result<TaggedState> {
    state.into().attach_probe(probe)
}

impl TaggedState {
    pub fn attach_probe(&self, probe: ProbeId) -> Result<TaggedState> {
        if self.probes.contains(&probe) {
            return Err(DistillError::DuplicateProbe(probe.to_string()));
        }
        let mut probes = self.probes.clone();
        probes.push(probe);
        let amplitudes = self
            .amplitudes
            .iter()
            .map(|((ket, tag), a)| {
                let mut shifts = tag.0.clone();
                shifts.push(0);
                ((ket.clone(), ProbeTag(shifts)), *a)
            })
            .collect();
        Ok(Self {
            modes: self.modes.clone(),
            probes,
            amplitudes,
        })
    }

    pub fn modes(&self) -> &[ModeLabel] {
        &self.modes
    }

    pub fn probes(&self) -> &[ProbeId] {
        &self.probes
    }

    pub fn terms(&self) -> impl Iterator<Item = (&BasisKet, &ProbeTag, &C64)> {
        self.amplitudes.iter().map(|((k, t), a)| (k, t, a))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn probe_index(&self, probe: &ProbeId) -> Result<usize> {
        self.probes
            .iter()
            .position(|p| p == probe)
            .ok_or_else(|| DistillError::UnknownProbe(probe.to_string()))
    }

    fn mode_index(&self, mode: &ModeLabel) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m == mode)
            .ok_or_else(|| DistillError::UnknownMode(mode.to_string()))
    }

    /// Passes `first` and `second` through the parity-check QND coupled to `probe`.
    pub fn parity_check(
        &self,
        first: &ModeLabel,
        second: &ModeLabel,
        probe: &ProbeId,
    ) -> Result<TaggedState> {
        let i = self.mode_index(first)?;
        let j = self.mode_index(second)?;
        check_unique_modes(&[first.clone(), second.clone()])?;
        let p = self.probe_index(probe)?;
        let amplitudes = self
            .amplitudes
            .iter()
            .map(|((ket, tag), a)| {
                let delta = match (ket.get(i), ket.get(j)) {
                    (Polarization::H, Polarization::V) => -2,
                    (Polarization::V, Polarization::H) => 2,
                    _ => 0,
                };
                let mut shifts = tag.0.clone();
                shifts[p] += delta;
                ((ket.clone(), ProbeTag(shifts)), *a)
            })
            .collect();
        Ok(Self {
            modes: self.modes.clone(),
            probes: self.probes.clone(),
            amplitudes,
        })
    }

    /// Reads out `|k|` of one probe. Outcomes are sorted by class.
    pub fn x_quadrature_measure(&self, probe: &ProbeId) -> Result<Vec<QuadratureOutcome>> {
        let p = self.probe_index(probe)?;
        let mut probes = self.probes.clone();
        probes.remove(p);

        let mut partitions: BTreeMap<ShiftClass, BTreeMap<(BasisKet, ProbeTag), C64>> =
            BTreeMap::new();
        for ((ket, tag), a) in &self.amplitudes {
            let class = ShiftClass(tag.0[p].unsigned_abs());
            let mut shifts = tag.0.clone();
            shifts.remove(p);
            accumulate(
                partitions.entry(class).or_default(),
                (ket.clone(), ProbeTag(shifts)),
                *a,
            );
        }

        let mut outcomes = Vec::new();
        for (class, mut amplitudes) in partitions {
            prune(&mut amplitudes);
            let probability: f64 = amplitudes.values().map(|a| a.norm_sqr()).sum();
            if probability < PRUNE_TOLERANCE {
                continue;
            }
            let scale = 1.0 / probability.sqrt();
            for a in amplitudes.values_mut() {
                *a *= scale;
            }
            outcomes.push(QuadratureOutcome {
                class,
                probability,
                state: TaggedState {
                    modes: self.modes.clone(),
                    probes: probes.clone(),
                    amplitudes,
                },
            });
        }
        Ok(outcomes)
    }

    /// Drops the (now empty) tag bookkeeping once every probe has been read.
    pub fn into_pure(self) -> Result<PureState> {
        if let Some(p) = self.probes.first() {
            return Err(DistillError::MalformedEnsemble(format!(
                "probe {p} has not been measured"
            )));
        }
        let mut amplitudes = BTreeMap::new();
        for ((ket, _), a) in self.amplitudes {
            accumulate(&mut amplitudes, ket, a);
        }
        Ok(PureState::from_parts(self.modes, amplitudes))
    }
}
