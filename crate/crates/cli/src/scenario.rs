//! Scenario files: one JSON document bundling every input a command may
//! need. Each section is optional; commands complain about the sections
//! they require.
//!
//! ```json
//! {
//!   "strategy":  { "n_images": 3761, "bias_acceptable": false, ... },
//!   "workload":  { "n_images": 3761, "consensus_fraction": 0.5, ... , "arms": 2, "annotators": 5 },
//!   "confidence": [ { "p": 0.5, "n_annotations": 10 } ],
//!   "dataset":   { "k": 4, "n_images": 200, "consensus_share": 0.68, ... },
//!   "annotators": { "identical": { "count": 5, "delta": 0.1143 } },
//!   "simulation": { "config": { "a_cons": 10, "a_full": 50, "arms": ["plain", "proposal"] },
//!                   "methods": [ { "arm": "proposal", "method": "CLEVERLABEL" } ] },
//!   "delta_sweep": { "deltas": [0.1, 0.3, 0.5], "annotations": 10000 },
//!   "strategy_sweep": { "budgets": [1, 3, 5, 10], "speedup": 1.2, ... }
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use softlabel_core::planner::{ConfidenceQuery, PlannerThresholds, StrategyInputs, WorkloadInputs};
use softlabel_core::simulator::{
    identical_profiles, AnnotatorProfile, GeneratorParams, MethodSpec, SimulationConfig, SweepGrid,
};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub strategy: Option<StrategyInputs>,
    #[serde(default)]
    pub thresholds: Option<PlannerThresholds>,
    #[serde(default)]
    pub workload: Option<WorkloadPlan>,
    #[serde(default)]
    pub confidence: Vec<ConfidenceQuery>,
    #[serde(default)]
    pub dataset: Option<GeneratorParams>,
    #[serde(default)]
    pub annotators: Option<Annotators>,
    #[serde(default)]
    pub simulation: Option<SimulationPlan>,
    #[serde(default)]
    pub delta_sweep: Option<DeltaSweep>,
    #[serde(default)]
    pub strategy_sweep: Option<SweepGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadPlan {
    pub inputs: WorkloadInputs,
    /// Number of annotation conditions collected, e.g. with and without proposals.
    #[serde(default = "one")]
    pub arms: u32,
    #[serde(default = "one")]
    pub annotators: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Annotators {
    Identical { count: usize, delta: f64 },
    Profiles(Vec<AnnotatorProfile>),
}

impl Annotators {
    pub fn profiles(&self) -> Vec<AnnotatorProfile> {
        match self {
            Annotators::Identical { count, delta } => identical_profiles(*count, *delta),
            Annotators::Profiles(p) => p.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationPlan {
    pub config: SimulationConfig,
    pub methods: Vec<MethodSpec>,
}

/// Proposal-arm bias measured at several offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaSweep {
    pub deltas: Vec<f64>,
    /// Annotations per image, without early stopping.
    pub annotations: usize,
}

impl Scenario {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        // serde_json errors already name the line and column
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
        section.as_ref().ok_or_else(|| CliError::Input(format!("scenario has no \"{name}\" section")))
    }
}
