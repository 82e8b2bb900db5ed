use thiserror::Error;

/// Library-wide error type.
///
/// Variants map onto the failure classes the operations document: domain
/// violations on inputs, configuration mistakes, singular geometric
/// configurations, non-terminating iterations, degenerate fits (which carry
/// partial data so callers can inspect what was measured), and internal
/// numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("singular configuration: {0}")]
    Singular(String),
    #[error("iteration did not terminate: {0}")]
    NonTermination(String),
    #[error("fit quality too low: {reason}; partial data: {partial:?}")]
    FitQuality {
        reason: String,
        /// (x, y) pairs that were available to the fit.
        partial: Vec<(f64, f64)>,
    },
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn singular(msg: impl Into<String>) -> Self {
        Error::Singular(msg.into())
    }
    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}
