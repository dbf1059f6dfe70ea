use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("genie metadata missing: {0}")]
    MissingGenieMetadata(String),

    #[error("matrix factorization failed: {0}")]
    FactorizationFailed(String),

    #[error("mixture fit failed: {0}")]
    FitFailed(String),

    #[error("file format error: {0}")]
    FileFormat(String),

    #[error("unknown estimator: {0}")]
    UnknownEstimator(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
