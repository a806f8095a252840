use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config ({origin}): {message}")]
    InvalidConfig { origin: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("malformed weights file {path}: {message}")]
    Weights { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] robust_lspi::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 for configuration problems, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InvalidConfig { .. } | CliError::Core(robust_lspi::Error::Config(_)) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
