//! Error type shared by all solver modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{field} must be positive (got {value})")]
    NonPositive { field: &'static str, value: f64 },

    #[error("diffusion coefficient alpha must be nonnegative (got {value})")]
    NegativeAlpha { value: f64 },

    #[error("problem specification has no target")]
    MissingTarget,

    #[error("space dimension {dim} is not supported (expected 1 or 2)")]
    UnsupportedDimension { dim: usize },

    #[error("point {point:?} lies outside the computational domain")]
    OutOfDomain { point: Vec<f64> },

    #[error("mesh must have at least one element")]
    ZeroElements,

    #[error("time steps sum to {sum} but the horizon is {expected}")]
    BadStepSum { sum: f64, expected: f64 },

    #[error("time step {index} is not positive ({value})")]
    NonPositiveStep { index: usize, value: f64 },

    #[error("size mismatch in {what}: expected {expected}, got {actual}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("symmetric factorization failed: {detail}")]
    FactorizationFailed { detail: String },

    #[error("Krylov breakdown: {detail}")]
    Breakdown { detail: String },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("problem size {size} exceeds the dense limit {limit}")]
    TooLargeForDense { size: usize, limit: usize },

    #[error("operation requires the exact-W preconditioner mode")]
    NotExactW,

    #[error("preconditioner is numerically singular: {detail}")]
    SingularW { detail: String },

    #[error("tau_max {tau_max} violates the small-step regime (limit {limit})")]
    StepTooLarge { tau_max: f64, limit: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
