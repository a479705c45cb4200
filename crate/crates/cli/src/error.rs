use geohead::GeoError;
use thiserror::Error;

/// CLI failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration; exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Unusable input or I/O failure; exit code 2.
    #[error("{0}")]
    Data(String),
    /// Non-finite values during training or evaluation; exit code 3.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<GeoError> for CliError {
    fn from(e: GeoError) -> Self {
        match e {
            GeoError::Numeric(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("I/O error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("JSON error: {e}"))
    }
}
