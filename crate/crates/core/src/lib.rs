//! Exact simulation of generalized entanglement distillation with cross-Kerr
//! QND parity checks.
//!
//! The crate purifies and concentrates rank-2 mixtures of less-entangled
//! photon pairs (and N-party GHZ states). Rounds are enumerated branch by
//! branch over sparse polarization states ([`state`]) coupled to symbolic
//! probe phases ([`qnd`]); [`protocols`] builds the rounds and the recycling
//! recursion, and [`analytics`] holds the closed-form success probabilities
//! and the harness that compares the two.

pub mod analytics;
pub mod cli;
pub mod error;
pub mod protocols;
pub mod qnd;
pub mod state;

pub use error::{DistillError, Result};
pub use num_complex::Complex64 as C64;
