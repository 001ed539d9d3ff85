//! Campaign service for multi-annotator soft-label collection.
//!
//! A [`Campaign`] batches images to annotators, groups batches by proposal
//! class, enforces per-annotator cooldowns, stops early on consensus and
//! escalates disputed images, and exports post-processed soft labels. State
//! lives in a directory of JSON files and append-only JSONL logs that are
//! replayed on startup. [`http::router`] exposes it over HTTP.

pub mod campaign;
pub mod error;
pub mod http;
pub mod model;
pub mod store;

pub use campaign::{Campaign, Progress, RejectReason, SubmitResponse};
pub use error::{Result, ServiceError};
pub use model::{CampaignConfig, CreateCampaign, DatasetManifestEntry, SubsetTag, TaskBatch};
