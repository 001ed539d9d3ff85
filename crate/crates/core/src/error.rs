use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("no annotations")]
    NoAnnotations,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid confusion matrix: {0}")]
    InvalidConfusion(String),
    #[error("class count mismatch: expected {expected}, got {actual}")]
    ClassCountMismatch { expected: usize, actual: usize },
    #[error("class {class} out of range for {k} classes")]
    ClassOutOfRange { class: usize, k: usize },
    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("records belong to different images ({0} and {1})")]
    MixedImages(String, String),
    #[error("correction undefined for delta {0}")]
    CorrectionUndefined(f64),
    #[error("records do not share a single proposal; use BLEND_ONLY instead")]
    MixedProposals,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
