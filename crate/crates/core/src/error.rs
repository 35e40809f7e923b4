//! Error type shared by all diqr modules.

use thiserror::Error;

/// Errors produced by dataset validation, the kernels, the solver and the
/// selection / simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFiniteValue(String),

    #[error("quantile level {0} is outside the open interval (0, 1)")]
    InvalidQuantile(f64),

    #[error("penalty argument {0} is negative")]
    NegativeInput(f64),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("weight {value} at index {index} is not strictly positive")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("problem too large for the brute-force oracle: {0}")]
    ProblemTooLarge(String),

    #[error("support size {size} exceeds the maximum model size {max}")]
    SupportTooLarge { size: usize, max: usize },

    #[error("pooled check loss is exactly zero; the criterion is undefined on an interpolating fit")]
    ZeroLoss,

    #[error("lambda grid is empty")]
    EmptyGrid,

    #[error("candidate list is empty")]
    CandidateListEmpty,

    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(&'static str),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
