use thiserror::Error;

/// Errors produced by construction, evaluation, and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("direction must be a non-zero finite vector")]
    ZeroVector,

    #[error("{0}")]
    Domain(String),

    #[error("invalid reality distribution: {0}")]
    InvalidDistribution(String),

    #[error("collapse onto a zero-probability branch")]
    ZeroProbabilityBranch,

    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),

    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors that stem from bad user-supplied configuration
    /// rather than a runtime failure. The CLI maps these to exit code 1.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::ZeroVector
                | Error::Domain(_)
                | Error::InvalidDistribution(_)
                | Error::InvalidSpec(_)
                | Error::Parse(_)
        )
    }
}
