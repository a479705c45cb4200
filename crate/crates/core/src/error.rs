use thiserror::Error;

/// Errors raised by the geohead library.
#[derive(Debug, Error)]
pub enum GeoError {
    /// A caller passed an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// Input data (JSONL, embeddings, checkpoints) could not be used.
    #[error("data error: {0}")]
    Data(String),

    /// Training or evaluation produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, GeoError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(GeoError::InvalidArgument(msg.into()))
}
