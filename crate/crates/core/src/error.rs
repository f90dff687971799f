use thiserror::Error;

/// Errors raised by the simulation core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero input vector")]
    ZeroInput,

    #[error("non-finite input")]
    NonFinite,

    #[error("power iteration did not converge after {iterations} iterations (last relative gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("divergence at iteration {iteration}: f = {value:e} (threshold {threshold:e})")]
    Diverged {
        iteration: usize,
        value: f64,
        threshold: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
