use thiserror::Error;

/// Errors produced by the stochastic-approximation toolkit.
#[derive(Debug, Error)]
pub enum SaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Parameters violate a precondition of a steplength or bound formula.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Argument outside the domain where a formula is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("steplength policy failed at iteration {iteration}: {reason}")]
    PolicyFailure { iteration: usize, reason: String },

    #[error("numerical failure: {reason} (residual {residual:e})")]
    Numerical { reason: String, residual: f64 },

    #[error("replication with seed {seed} failed: {source}")]
    Replication {
        seed: u64,
        #[source]
        source: Box<SaError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SaError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> SaError {
    SaError::InvalidInput(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> SaError {
    SaError::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> SaError {
    SaError::Configuration(msg.into())
}
