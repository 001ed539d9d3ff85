use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("campaign {0} not found")]
    UnknownCampaign(String),
    #[error("campaign {0} already exists")]
    DuplicateCampaign(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("manifest line {line}: {message}")]
    InvalidManifest { line: usize, message: String },
    #[error("annotator {0} is excluded")]
    AnnotatorExcluded(String),
    #[error("annotator {0} not found")]
    UnknownAnnotator(String),
    #[error(transparent)]
    Core(#[from] softlabel_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

impl ServiceError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ServiceError::Io { path: path.into(), source }
    }

    /// True for failures caused by the request rather than the server.
    pub fn is_client_error(&self) -> bool {
        !matches!(self, ServiceError::Io { .. } | ServiceError::Corrupt { .. })
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
