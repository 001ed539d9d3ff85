//! Planning, simulation and post-processing for multi-annotator soft-label
//! campaigns on ambiguous image-classification data.
//!
//! - [`label_model`]: soft labels, aggregation and label-quality metrics
//! - [`planner`]: strategy decisions, workload and confidence sizing
//! - [`postprocess`]: proposal-bias correction and class blending
//! - [`simulator`]: seeded Monte-Carlo annotator campaigns
//! - [`gatekeeper`]: annotator qualification on the gold subset
//! - [`export`]: soft-label tables shared by the service and the CLI

pub mod error;
pub mod export;
pub mod gatekeeper;
pub mod label_model;
pub mod planner;
pub mod postprocess;
pub mod simulator;

pub use error::{Error, Result};
pub use label_model::{AnnotationRecord, ClassDistribution, ConfusionMatrix, ImageLabelSet};
pub use postprocess::{Method, PostprocessConfig, PostprocessParams};
