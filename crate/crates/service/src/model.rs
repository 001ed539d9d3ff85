use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use softlabel_core::gatekeeper::GateConfig;
use softlabel_core::{ClassDistribution, PostprocessParams};

use crate::error::{Result, ServiceError};

fn default_cooldown_hours() -> f64 {
    12.0
}

fn default_batch_size() -> usize {
    24
}

fn default_agreement() -> f64 {
    1.0
}

fn default_batch_ttl_minutes() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub campaign_id: String,
    pub k: usize,
    pub class_names: Vec<String>,
    pub a_cons: usize,
    pub a_full: usize,
    pub use_proposals: bool,
    #[serde(default = "default_cooldown_hours")]
    pub cooldown_hours: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Annotators must qualify on the gold subset first when set.
    #[serde(default)]
    pub gate: Option<GateConfig>,
    #[serde(default)]
    pub postprocess: PostprocessParams,
    /// Share of the first `a_cons` answers that must agree to stop early.
    #[serde(default = "default_agreement")]
    pub agreement_threshold: f64,
    /// Issued batches not submitted within this window become stale and
    /// their reservations lapse.
    #[serde(default = "default_batch_ttl_minutes")]
    pub batch_ttl_minutes: f64,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ServiceError::InvalidConfig(m));
        let id_ok = !self.campaign_id.is_empty()
            && self.campaign_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !id_ok {
            return bad("campaign_id must be non-empty and use only [A-Za-z0-9_-]".into());
        }
        if self.k < 2 {
            return bad("k must be at least 2".into());
        }
        if self.class_names.len() != self.k {
            return bad(format!("k = {} but {} class names", self.k, self.class_names.len()));
        }
        if self.a_cons == 0 || self.a_cons > self.a_full {
            return bad(format!("need 0 < a_cons <= a_full, got {} and {}", self.a_cons, self.a_full));
        }
        if !(self.cooldown_hours >= 0.0 && self.cooldown_hours.is_finite()) {
            return bad("cooldown_hours must be a non-negative number".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.agreement_threshold > 0.0 && self.agreement_threshold <= 1.0) {
            return bad("agreement_threshold must lie in (0, 1]".into());
        }
        if self.batch_ttl_minutes.is_nan() || self.batch_ttl_minutes <= 0.0 {
            return bad("batch_ttl_minutes must be positive".into());
        }
        if let Some(gate) = &self.gate {
            gate.validate().map_err(|e| ServiceError::InvalidConfig(e.to_string()))?;
        }
        self.postprocess.validate(self.k).map_err(|e| ServiceError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn cooldown_ms(&self) -> u64 {
        (self.cooldown_hours * 3_600_000.0).round() as u64
    }

    pub fn batch_ttl_ms(&self) -> u64 {
        (self.batch_ttl_minutes * 60_000.0).round() as u64
    }

    /// Gate as applied to this campaign: both proposal modes are only
    /// required when the campaign shows proposals at all.
    pub fn effective_gate(&self) -> Option<GateConfig> {
        self.gate.clone().map(|mut g| {
            g.require_both_proposal_modes &= self.use_proposals;
            g
        })
    }
}

/// Role of a manifest image: raw pool, annotation target or gold subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SubsetTag {
    RawOnly,
    Annotate,
    Gold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifestEntry {
    pub image_id: String,
    pub uri: String,
    #[serde(default)]
    pub proposal: Option<usize>,
    #[serde(default)]
    pub gold_label: Option<usize>,
    /// Held-out reference distribution; never used by the service itself.
    #[serde(default)]
    pub eval_dist: Option<ClassDistribution>,
    pub subset_tag: SubsetTag,
}

impl DatasetManifestEntry {
    fn validate(&self, k: usize) -> std::result::Result<(), String> {
        if self.image_id.is_empty() {
            return Err("empty image_id".into());
        }
        for (name, class) in [("proposal", self.proposal), ("gold_label", self.gold_label)] {
            if let Some(c) = class {
                if c >= k {
                    return Err(format!("{name} {c} out of range for k = {k}"));
                }
            }
        }
        if let Some(d) = &self.eval_dist {
            if d.k() != k {
                return Err(format!("eval_dist has {} classes, expected {k}", d.k()));
            }
        }
        if self.subset_tag == SubsetTag::Gold && self.gold_label.is_none() {
            return Err("GOLD entry without gold_label".into());
        }
        Ok(())
    }
}

/// Parses and validates a JSONL manifest; errors carry the 1-based line.
pub fn parse_manifest(text: &str, k: usize) -> Result<Vec<DatasetManifestEntry>> {
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let invalid = |message: String| ServiceError::InvalidManifest { line: i + 1, message };
        let entry: DatasetManifestEntry = serde_json::from_str(line).map_err(|e| invalid(e.to_string()))?;
        entry.validate(k).map_err(invalid)?;
        if !seen.insert(entry.image_id.clone()) {
            return Err(invalid(format!("duplicate image_id {}", entry.image_id)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn validate_manifest(entries: &[DatasetManifestEntry], k: usize) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (i, entry) in entries.iter().enumerate() {
        let invalid = |message: String| ServiceError::InvalidManifest { line: i + 1, message };
        entry.validate(k).map_err(invalid)?;
        if !seen.insert(entry.image_id.as_str()) {
            return Err(invalid(format!("duplicate image_id {}", entry.image_id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub image_id: String,
    pub uri: String,
    /// Proposal to display; always `None` in campaigns without proposals.
    pub proposal: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBatch {
    pub batch_id: String,
    pub annotator_id: String,
    pub items: Vec<BatchItem>,
    pub issued_at_ms: u64,
    /// Gold batches score the annotator instead of collecting labels.
    #[serde(default)]
    pub gold: bool,
    #[serde(default)]
    pub with_proposals: bool,
}

/// Request body of `POST /api/campaigns`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateCampaign {
    pub config: CampaignConfig,
    pub manifest: Vec<DatasetManifestEntry>,
}
