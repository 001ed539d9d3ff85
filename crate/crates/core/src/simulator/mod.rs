//! Monte-Carlo annotator and campaign simulation.
//!
//! Annotations are drawn from ground-truth soft labels under the proposal
//! acceptance model, optionally stopped early on consensus, post-processed
//! with each requested method and scored by KL divergence against the
//! ground truth. Every image draws from its own RNG stream keyed by
//! `(seed, arm, image_id)`, so results do not depend on scheduling.
//!
//! The timing model is linear per annotation. Breaks and technical
//! overhead are not simulated.

mod dataset;
mod exec;
pub mod rng;
mod sweep;

pub use dataset::{GeneratorParams, GtShape, SyntheticDataset, SyntheticImage};
pub use exec::Execution;
pub use sweep::{
    annotation_cost, proposal_annotations_at_cost, strategy_sweep, strategy_sweep_seeds, sweep_csv, SweepGrid, SweepRow,
};

use std::collections::BTreeMap;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_model::{
    aggregate, kl_divergence, AnnotationRecord, ClassDistribution, ConfusionMatrix, ImageLabelSet,
};
use crate::postprocess::{estimate_confusion, BiasModel, DeltaPair, Method, PostprocessConfig};

fn default_seconds() -> f64 {
    1.0
}

/// Behaviour of one simulated annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    /// Probability of accepting a shown proposal regardless of the image.
    #[serde(default)]
    pub delta: f64,
    /// Response confusion applied to answers not taken from the proposal.
    #[serde(default)]
    pub noise: Option<ConfusionMatrix>,
    #[serde(default = "default_seconds")]
    pub seconds_per_annotation_no_proposal: f64,
    #[serde(default = "default_seconds")]
    pub seconds_per_annotation_proposal: f64,
}

impl AnnotatorProfile {
    pub fn new(annotator_id: impl Into<String>, delta: f64) -> Self {
        Self {
            annotator_id: annotator_id.into(),
            delta,
            noise: None,
            seconds_per_annotation_no_proposal: 1.0,
            seconds_per_annotation_proposal: 1.0,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidInput(format!("annotator {}: delta must lie in [0, 1]", self.annotator_id)));
        }
        if !(self.seconds_per_annotation_no_proposal > 0.0 && self.seconds_per_annotation_proposal > 0.0) {
            return Err(Error::InvalidInput(format!("annotator {}: timings must be positive", self.annotator_id)));
        }
        if let Some(noise) = &self.noise {
            if noise.k() != k {
                return Err(Error::ClassCountMismatch { expected: k, actual: noise.k() });
            }
        }
        Ok(())
    }

    pub fn seconds(&self, with_proposal: bool) -> f64 {
        if with_proposal {
            self.seconds_per_annotation_proposal
        } else {
            self.seconds_per_annotation_no_proposal
        }
    }
}

/// `count` identical annotators, recovering a single dataset-wide offset.
pub fn identical_profiles(count: usize, delta: f64) -> Vec<AnnotatorProfile> {
    (0..count).map(|i| AnnotatorProfile::new(format!("sim-{i}"), delta)).collect()
}

fn sample_from<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    // distributions are validated, so weights are nonnegative with a positive sum
    WeightedIndex::new(probs).expect("validated distribution").sample(rng)
}

/// Draws one annotation.
///
/// With a proposal the annotator accepts it with probability `δ`, otherwise
/// answers from `gt`, passing that answer through the noise matrix if set.
pub fn sample_annotation<R: Rng>(
    gt: &ClassDistribution,
    proposal: Option<usize>,
    profile: &AnnotatorProfile,
    rng: &mut R,
) -> usize {
    if let Some(rho) = proposal {
        if rng.random::<f64>() < profile.delta {
            return rho;
        }
    }
    let answer = sample_from(gt.probs(), rng);
    match &profile.noise {
        Some(noise) => sample_from(noise.row(answer), rng),
        None => answer,
    }
}

/// Collects annotations for one image with early stopping.
///
/// The first `a_cons` annotations are drawn round-robin over `profiles`; if
/// they are unanimous the image is done, otherwise drawing continues up to
/// `a_full` in total.
pub fn annotate_image<R: Rng>(
    image_id: &str,
    gt: &ClassDistribution,
    proposal: Option<usize>,
    profiles: &[AnnotatorProfile],
    a_cons: usize,
    a_full: usize,
    rng: &mut R,
) -> Result<ImageLabelSet> {
    if profiles.is_empty() {
        return Err(Error::InvalidInput("no annotator profiles".into()));
    }
    if a_cons == 0 || a_cons > a_full {
        return Err(Error::InvalidInput("need 0 < a_cons <= a_full".into()));
    }
    let batch_id = if proposal.is_some() { "sim-proposal" } else { "sim-plain" };
    let mut clock_ms = 0.0f64;
    let mut records = Vec::with_capacity(a_cons);
    let mut draw = |i: usize, records: &mut Vec<AnnotationRecord>| {
        let profile = &profiles[i % profiles.len()];
        clock_ms += profile.seconds(proposal.is_some()) * 1000.0;
        records.push(AnnotationRecord {
            image_id: image_id.to_string(),
            annotator_id: profile.annotator_id.clone(),
            chosen_class: sample_annotation(gt, proposal, profile, rng),
            proposal_shown: proposal,
            timestamp_ms: clock_ms.round() as u64,
            batch_id: batch_id.to_string(),
        });
    };
    for i in 0..a_cons {
        draw(i, &mut records);
    }
    let unanimous = records.iter().all(|r| r.chosen_class == records[0].chosen_class);
    if !unanimous {
        for i in a_cons..a_full {
            draw(i, &mut records);
        }
    }
    ImageLabelSet::new(image_id, records)
}

/// Which annotation condition a method is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Plain,
    Proposal,
}

impl Arm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::Plain => "plain",
            Arm::Proposal => "proposal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub arm: Arm,
    pub method: Method,
}

impl MethodSpec {
    pub fn new(arm: Arm, method: Method) -> Self {
        Self { arm, method }
    }

    /// Report key, e.g. `proposal/CLEVERLABEL`.
    pub fn label(&self) -> String {
        format!("{}/{}", self.arm.as_str(), self.method.as_str())
    }
}

/// Where the blending matrix `c` comes from during simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConfusionSource {
    Given {
        matrix: ConfusionMatrix,
    },
    /// Row `j` is the mean ground truth of images whose majority class is `j`.
    GroundTruth,
    /// Estimated from a separate plain pass of `annotations` per image.
    Calibrated {
        annotations: usize,
    },
    /// Estimated from the simulated campaign annotations themselves.
    Campaign,
}

impl Default for ConfusionSource {
    fn default() -> Self {
        ConfusionSource::Calibrated { annotations: 10 }
    }
}

fn default_consistency() -> f64 {
    0.95
}

fn default_beta() -> f64 {
    crate::postprocess::DEFAULT_BLEND_BETA
}

fn default_skip() -> usize {
    crate::postprocess::DEFAULT_SKIP_BLEND_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub a_cons: usize,
    pub a_full: usize,
    pub arms: Vec<Arm>,
    /// Offset assumed by bias correction; the mean profile offset when absent.
    #[serde(default)]
    pub assumed_delta: Option<f64>,
    #[serde(default)]
    pub confusion: ConfusionSource,
    #[serde(default = "default_beta")]
    pub blend_weight_beta: f64,
    #[serde(default = "default_skip")]
    pub skip_blend_threshold: usize,
    /// Agreement share for counting an image as consistent in `p̂_c`.
    #[serde(default = "default_consistency")]
    pub consistency_threshold: f64,
    #[serde(default)]
    pub execution: Execution,
}

impl SimulationConfig {
    pub fn new(a_cons: usize, a_full: usize, arms: Vec<Arm>) -> Self {
        Self {
            a_cons,
            a_full,
            arms,
            assumed_delta: None,
            confusion: ConfusionSource::default(),
            blend_weight_beta: default_beta(),
            skip_blend_threshold: default_skip(),
            consistency_threshold: default_consistency(),
            execution: Execution::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.a_cons == 0 || self.a_cons > self.a_full {
            return Err(Error::InvalidInput("need 0 < a_cons <= a_full".into()));
        }
        if self.arms.is_empty() {
            return Err(Error::InvalidInput("at least one arm required".into()));
        }
        if self.blend_weight_beta.is_nan() || self.blend_weight_beta <= 0.0 {
            return Err(Error::InvalidInput("blend_weight_beta must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasMeasurement {
    /// Mean of `agg[ρ] - gt[ρ]` over proposal-arm images.
    pub measured: f64,
    /// Mean of `δ (1 - gt[ρ])` under the acceptance model.
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub seed: u64,
    pub n_images: usize,
    /// Mean `KL(gt || method output)` keyed by [`MethodSpec::label`].
    pub per_method_kl: BTreeMap<String, f64>,
    pub total_annotations: usize,
    pub annotations_per_arm: BTreeMap<String, usize>,
    pub hours_per_arm: BTreeMap<String, f64>,
    /// Share of images whose annotations agree at least at the consistency threshold.
    pub measured_consensus_fraction: f64,
    pub measured_speedup: f64,
    pub proposal_bias: Option<BiasMeasurement>,
    pub per_image_counts: BTreeMap<String, usize>,
}

struct ImageOutcome {
    plain: Option<ImageLabelSet>,
    proposal: Option<ImageLabelSet>,
    seconds: BTreeMap<Arm, f64>,
    plain_seconds_all: f64,
    proposal_seconds_all: f64,
}

fn consistent(set: &ImageLabelSet, k: usize, threshold: f64) -> Result<bool> {
    let d = aggregate(set, k)?;
    Ok(d.get(d.majority_vote()) >= threshold - 1e-12)
}

fn ground_truth_confusion(data: &SyntheticDataset) -> Result<ConfusionMatrix> {
    let k = data.k;
    let mut acc = vec![vec![0.0; k]; k];
    for img in &data.images {
        for (t, p) in acc[img.gt.majority_vote()].iter_mut().zip(img.gt.probs()) {
            *t += p;
        }
    }
    let rows = acc
        .into_iter()
        .enumerate()
        .map(|(j, row)| {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter().map(|v| v / total).collect()
            } else {
                (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect()
            }
        })
        .collect();
    ConfusionMatrix::new(rows)
}

/// Resolves the blending matrix for a simulated campaign.
pub fn resolve_confusion(
    source: &ConfusionSource,
    data: &SyntheticDataset,
    profiles: &[AnnotatorProfile],
    campaign_sets: &[&ImageLabelSet],
    bias: BiasModel,
    execution: Execution,
) -> Result<ConfusionMatrix> {
    match source {
        ConfusionSource::Given { matrix } => {
            if matrix.k() != data.k {
                return Err(Error::ClassCountMismatch { expected: data.k, actual: matrix.k() });
            }
            Ok(matrix.clone())
        }
        ConfusionSource::GroundTruth => ground_truth_confusion(data),
        ConfusionSource::Calibrated { annotations } => {
            let n = (*annotations).max(1);
            let sets = execution
                .map(&data.images, |img| {
                    let mut rng = rng::stream(data.seed, "calibration", &img.image_id);
                    annotate_image(&img.image_id, &img.gt, None, profiles, n, n, &mut rng)
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            estimate_confusion(&sets, data.k, bias)
        }
        ConfusionSource::Campaign => estimate_confusion(campaign_sets.iter().copied(), data.k, bias),
    }
}

/// Simulates a campaign over `data` and scores each requested method.
pub fn run_campaign(
    data: &SyntheticDataset,
    profiles: &[AnnotatorProfile],
    config: &SimulationConfig,
    methods: &[MethodSpec],
) -> Result<CampaignReport> {
    config.validate()?;
    if profiles.is_empty() {
        return Err(Error::InvalidInput("no annotator profiles".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("dataset has no images".into()));
    }
    for p in profiles {
        p.validate(data.k)?;
    }
    for m in methods {
        if !config.arms.contains(&m.arm) {
            return Err(Error::InvalidInput(format!("{} requested but arm not simulated", m.label())));
        }
        if m.method.requires_proposals() && m.arm == Arm::Plain {
            return Err(Error::InvalidInput(format!("{} requires proposals", m.label())));
        }
    }

    let mean_delta = profiles.iter().map(|p| p.delta).sum::<f64>() / profiles.len() as f64;
    let bias = BiasModel::new(config.assumed_delta.unwrap_or(mean_delta))?;
    let run_plain = config.arms.contains(&Arm::Plain);
    let run_proposal = config.arms.contains(&Arm::Proposal);

    let outcomes = config
        .execution
        .map(&data.images, |img| -> Result<ImageOutcome> {
            let mut seconds = BTreeMap::new();
            let mut plain_all = 0.0;
            let mut proposal_all = 0.0;
            let mut simulate = |arm: Arm| -> Result<ImageLabelSet> {
                let proposal = (arm == Arm::Proposal).then_some(img.proposal);
                let mut rng = rng::stream(data.seed, arm.as_str(), &img.image_id);
                let set =
                    annotate_image(&img.image_id, &img.gt, proposal, profiles, config.a_cons, config.a_full, &mut rng)?;
                let mut arm_secs = 0.0;
                for i in 0..set.len() {
                    let p = &profiles[i % profiles.len()];
                    arm_secs += p.seconds(proposal.is_some());
                    plain_all += p.seconds_per_annotation_no_proposal;
                    proposal_all += p.seconds_per_annotation_proposal;
                }
                seconds.insert(arm, arm_secs);
                Ok(set)
            };
            let plain = run_plain.then(|| simulate(Arm::Plain)).transpose()?;
            let proposal = run_proposal.then(|| simulate(Arm::Proposal)).transpose()?;
            Ok(ImageOutcome {
                plain,
                proposal,
                seconds,
                plain_seconds_all: plain_all,
                proposal_seconds_all: proposal_all,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let campaign_sets: Vec<&ImageLabelSet> =
        outcomes.iter().flat_map(|o| o.plain.iter().chain(o.proposal.iter())).collect();
    let confusion = resolve_confusion(&config.confusion, data, profiles, &campaign_sets, bias, config.execution)?;
    let cfg = PostprocessConfig {
        bias,
        confusion,
        blend_weight_beta: config.blend_weight_beta,
        skip_blend_threshold: config.skip_blend_threshold,
    };

    let pairs: Vec<(&SyntheticImage, &ImageOutcome)> = data.images.iter().zip(&outcomes).collect();
    let kl_rows = config
        .execution
        .map(&pairs, |(img, outcome)| -> Result<Vec<f64>> {
            methods
                .iter()
                .map(|m| {
                    let set = match m.arm {
                        Arm::Plain => outcome.plain.as_ref(),
                        Arm::Proposal => outcome.proposal.as_ref(),
                    }
                    .expect("arm simulated");
                    kl_divergence(&img.gt, &m.method.apply(set, &cfg)?)
                })
                .collect()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let n = data.len() as f64;
    let mut per_method_kl = BTreeMap::new();
    for (j, m) in methods.iter().enumerate() {
        let mean = kl_rows.iter().map(|row| row[j]).sum::<f64>() / n;
        per_method_kl.insert(m.label(), mean);
    }

    let mut annotations_per_arm = BTreeMap::new();
    let mut hours_per_arm = BTreeMap::new();
    let mut per_image_counts = BTreeMap::new();
    for (img, o) in &pairs {
        let mut count = 0;
        for (arm, set) in [(Arm::Plain, &o.plain), (Arm::Proposal, &o.proposal)] {
            if let Some(set) = set {
                *annotations_per_arm.entry(arm.as_str().to_string()).or_insert(0) += set.len();
                *hours_per_arm.entry(arm.as_str().to_string()).or_insert(0.0) += o.seconds[&arm] / 3600.0;
                count += set.len();
            }
        }
        per_image_counts.insert(img.image_id.clone(), count);
    }
    let total_annotations = per_image_counts.values().sum();

    let mut consistent_images = 0usize;
    for (_, o) in &pairs {
        let set = o.plain.as_ref().or(o.proposal.as_ref()).expect("one arm simulated");
        if consistent(set, data.k, config.consistency_threshold)? {
            consistent_images += 1;
        }
    }

    let plain_secs: f64 = outcomes.iter().map(|o| o.plain_seconds_all).sum();
    let proposal_secs: f64 = outcomes.iter().map(|o| o.proposal_seconds_all).sum();

    let proposal_bias = if run_proposal {
        let mut measured = 0.0;
        let mut expected = 0.0;
        for (img, o) in &pairs {
            let set = o.proposal.as_ref().expect("proposal arm simulated");
            let agg = aggregate(set, data.k)?;
            measured += agg.get(img.proposal) - img.gt.get(img.proposal);
            expected += mean_delta * (1.0 - img.gt.get(img.proposal));
        }
        Some(BiasMeasurement { measured: measured / n, expected: expected / n })
    } else {
        None
    };

    Ok(CampaignReport {
        seed: data.seed,
        n_images: data.len(),
        per_method_kl,
        total_annotations,
        annotations_per_arm,
        hours_per_arm,
        measured_consensus_fraction: consistent_images as f64 / n,
        measured_speedup: plain_secs / proposal_secs,
        proposal_bias,
        per_image_counts,
    })
}

/// Annotates every image `annotations` times in both arms, without early
/// stopping, and pairs the two aggregates for [`estimate_delta`].
///
/// [`estimate_delta`]: crate::postprocess::estimate_delta
pub fn delta_pairs(
    data: &SyntheticDataset,
    profiles: &[AnnotatorProfile],
    annotations: usize,
    execution: Execution,
) -> Result<Vec<DeltaPair>> {
    if profiles.is_empty() {
        return Err(Error::InvalidInput("no annotator profiles".into()));
    }
    execution
        .map(&data.images, |img| {
            let arm = |arm: Arm| {
                let proposal = (arm == Arm::Proposal).then_some(img.proposal);
                let mut rng = rng::stream(data.seed, arm.as_str(), &img.image_id);
                let set =
                    annotate_image(&img.image_id, &img.gt, proposal, profiles, annotations, annotations, &mut rng)?;
                aggregate(&set, data.k)
            };
            Ok(DeltaPair { proposal: img.proposal, p_without: arm(Arm::Plain)?, p_with: arm(Arm::Proposal)? })
        })
        .into_iter()
        .collect()
}

/// Per-seed CSV summary of a report: one row per method.
pub fn report_csv(report: &CampaignReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record([
        "seed",
        "method",
        "mean_kl",
        "total_annotations",
        "consensus_fraction",
        "speedup",
        "measured_bias",
        "expected_bias",
    ])
    .map_err(io)?;
    let (mb, eb) = match report.proposal_bias {
        Some(b) => (b.measured.to_string(), b.expected.to_string()),
        None => (String::new(), String::new()),
    };
    for (label, kl) in &report.per_method_kl {
        w.write_record([
            report.seed.to_string(),
            label.clone(),
            kl.to_string(),
            report.total_annotations.to_string(),
            report.measured_consensus_fraction.to_string(),
            report.measured_speedup.to_string(),
            mb.clone(),
            eb.clone(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
