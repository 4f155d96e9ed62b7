use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration; `field` is the dotted path of the culprit.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] modq_core::Error),
    #[error(transparent)]
    Service(#[from] modq_service::ServiceError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: usage errors exit 2 from argument parsing; every
    /// error reaching here exits 1.
    pub fn exit_code(&self) -> u8 {
        1
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
