use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistillError {
    #[error("coefficients are not normalized: |gamma|^2 + |delta|^2 = {0}")]
    NotNormalized(f64),

    #[error("state is not normalized: sum |amp|^2 = {0}")]
    StateNotNormalized(f64),

    #[error("mode label must be nonempty")]
    EmptyLabel,

    #[error("duplicate mode label: {0}")]
    DuplicateMode(String),

    #[error("unknown mode label: {0}")]
    UnknownMode(String),

    #[error("basis ket has {found} entries but the state has {expected} modes")]
    KetLength { expected: usize, found: usize },

    #[error("mode lists differ: {left:?} vs {right:?}")]
    ModeMismatch {
        left: Vec<String>,
        right: Vec<String>,
    },

    #[error("duplicate probe id: {0}")]
    DuplicateProbe(String),

    #[error("unknown probe id: {0}")]
    UnknownProbe(String),

    #[error("probability out of range: {0}")]
    InvalidProbability(f64),

    #[error("ensemble weights sum to {0}, expected 1")]
    WeightsNotNormalized(f64),

    #[error("ensemble has no members")]
    EmptyEnsemble,

    #[error("malformed ensemble: {0}")]
    MalformedEnsemble(String),

    #[error(
        "member {member} does not match the round-{round} coefficient form (mismatch {mismatch:e})"
    )]
    CoefficientMismatch {
        member: usize,
        round: usize,
        mismatch: f64,
    },

    #[error("invalid round index {0}")]
    InvalidRound(usize),

    #[error("invalid party count {0}")]
    InvalidParties(usize),
}

pub type Result<T> = std::result::Result<T, DistillError>;
