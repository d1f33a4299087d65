use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("access point {ap} coincides with a cell center; log-distance mean is singular")]
    SingularGeometry { ap: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("filtering distribution underflowed at step {step}")]
    Underflow { step: usize },
    #[error("invalid observation stream: {0}")]
    InvalidStream(&'static str),
    #[error("empty input")]
    Empty,
}
