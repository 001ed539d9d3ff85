use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, schema violations, invalid values.
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Io { .. } => 3,
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().to_path_buf(), source }
    }
}

impl From<softlabel_core::Error> for CliError {
    fn from(e: softlabel_core::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<softlabel_service::ServiceError> for CliError {
    fn from(e: softlabel_service::ServiceError) -> Self {
        use softlabel_service::ServiceError;
        match e {
            ServiceError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
