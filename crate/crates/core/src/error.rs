use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate potential: {0}")]
    DegeneratePotential(String),

    #[error("degenerate operator: largest singular value is zero")]
    DegenerateOperator,

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    /// `M(λ)` could not be inverted; either an embedded eigenvalue or a
    /// numerically resonant spectral parameter.
    #[error("spectral singularity at lambda = {lambda:e} (smallest singular value {sigma_min:e})")]
    SpectralSingularity { lambda: f64, sigma_min: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite kernel value at node pair ({row}, {col})")]
    Assembly { row: usize, col: usize },

    #[error("inconsistent resonance ladder: {0}")]
    Inconsistency(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
