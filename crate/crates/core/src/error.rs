//! Error type shared by all modules.

/// Errors surfaced by ensemble construction, kernels, problems, and runs.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("ensemble size must be at least 2, got {k}")]
    InvalidEnsembleSize { k: usize },

    #[error("non-finite value: {context}")]
    NonFinite { context: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error(
        "transform matrix is not positive definite (min eigenvalue {min_eigenvalue:e}); \
         the step size is too large for an indefinite projected Hessian"
    )]
    NonPositiveTransform { min_eigenvalue: f64 },

    #[error("unsupported problem: {0}")]
    UnsupportedProblem(String),

    #[error("unknown problem '{name}'; built-in problems: {available}")]
    UnknownProblem { name: String, available: String },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("eigendecomposition did not converge after {0} sweeps")]
    EigenNoConvergence(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
