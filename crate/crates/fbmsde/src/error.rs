use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("covariance factorization failed (largest jitter tried {jitter:e})")]
    Factorization { jitter: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("Picard iteration stopped after {iterations} iterations with residual {residual:e}")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
