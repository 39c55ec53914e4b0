use thiserror::Error;

/// Errors raised by the decoding engine and its helpers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("every weight is zero; cannot normalize")]
    AllZero,
    #[error("weights must be finite and non-negative (index {index})")]
    InvalidWeight { index: usize },
    #[error("probabilities do not form a distribution: {0}")]
    InvalidDist(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid time range: need 0 <= s < t <= 1, got s={s}, t={t}")]
    InvalidRange { s: f64, t: f64 },
    #[error("draft probability of the proposed token is zero")]
    DraftProbZero,
    #[error("probabilities must be strictly positive (p={p}, q={q})")]
    NonpositiveProb { p: f64, q: f64 },
    #[error("method trace has zero NFE or zero tokens")]
    ZeroNfe,
    #[error("enumeration over {len} positions exceeds the limit of {max}")]
    TooLarge { len: usize, max: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("prompt must contain at least one token")]
    EmptyPrompt,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
