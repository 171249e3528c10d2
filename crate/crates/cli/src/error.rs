use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(longtrait::Error),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(longtrait::Error::InvalidArgument(msg.into()))
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Data(longtrait::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

impl From<longtrait::Error> for CliError {
    fn from(e: longtrait::Error) -> Self {
        match e {
            longtrait::Error::Divergence { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Data(other),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;
