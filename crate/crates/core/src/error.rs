use thiserror::Error;

/// Errors produced by the discretization, prior, forward and sampling layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh mismatch: level {left} vs level {right}")]
    MeshMismatch { left: u32, right: u32 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("quadrature did not converge: max entry change {change:.3e} on refinement")]
    QuadratureNotConverged { change: f64 },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
