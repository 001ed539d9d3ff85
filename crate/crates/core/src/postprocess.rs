//! Post-processing of aggregated soft labels.
//!
//! Annotators shown a proposal `ρ` accept it with probability `δ`
//! regardless of the image, and otherwise answer as they would have
//! without it. The observed distribution is therefore the affine mixture
//! `(1 - δ)·P + δ·1_ρ`. Bias correction inverts that mixture; class
//! blending shrinks the (corrected) estimate towards a fixed row of the
//! class-transition matrix `c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_model::{aggregate, ClassDistribution, ConfusionMatrix, ImageLabelSet, ProposalMode};

/// Dataset-specific probability of accepting a proposal regardless of content.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct BiasModel {
    delta: f64,
}

impl BiasModel {
    pub fn new(delta: f64) -> Result<Self> {
        if (0.0..1.0).contains(&delta) {
            Ok(Self { delta })
        } else {
            Err(Error::CorrectionUndefined(delta))
        }
    }

    pub fn none() -> Self {
        Self { delta: 0.0 }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl TryFrom<f64> for BiasModel {
    type Error = Error;

    fn try_from(delta: f64) -> Result<Self> {
        Self::new(delta)
    }
}

impl From<BiasModel> for f64 {
    fn from(b: BiasModel) -> Self {
        b.delta
    }
}

pub const DEFAULT_BLEND_BETA: f64 = 2.0;
pub const DEFAULT_SKIP_BLEND_THRESHOLD: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessConfig {
    pub bias: BiasModel,
    pub confusion: ConfusionMatrix,
    /// Blend weight is `λ = A / (A + β)`.
    pub blend_weight_beta: f64,
    /// At or above this many annotations blending is skipped.
    pub skip_blend_threshold: usize,
}

impl PostprocessConfig {
    pub fn new(bias: BiasModel, confusion: ConfusionMatrix) -> Self {
        Self {
            bias,
            confusion,
            blend_weight_beta: DEFAULT_BLEND_BETA,
            skip_blend_threshold: DEFAULT_SKIP_BLEND_THRESHOLD,
        }
    }

    pub fn k(&self) -> usize {
        self.confusion.k()
    }

    pub fn blend_weight(&self, annotations: usize) -> f64 {
        let a = annotations as f64;
        a / (a + self.blend_weight_beta)
    }
}

/// Serialized form of [`PostprocessConfig`]. When `confusion` is absent it
/// is estimated from the annotations at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessParams {
    pub delta: f64,
    pub confusion: Option<ConfusionMatrix>,
    pub blend_weight_beta: f64,
    pub skip_blend_threshold: usize,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self {
            delta: 0.0,
            confusion: None,
            blend_weight_beta: DEFAULT_BLEND_BETA,
            skip_blend_threshold: DEFAULT_SKIP_BLEND_THRESHOLD,
        }
    }
}

impl PostprocessParams {
    pub fn validate(&self, k: usize) -> Result<()> {
        BiasModel::new(self.delta)?;
        if self.blend_weight_beta.is_nan() || self.blend_weight_beta <= 0.0 {
            return Err(Error::InvalidInput("blend_weight_beta must be positive".into()));
        }
        if let Some(c) = &self.confusion {
            if c.k() != k {
                return Err(Error::ClassCountMismatch { expected: k, actual: c.k() });
            }
        }
        Ok(())
    }

    /// Builds the concrete config, estimating `c` from `sets` when needed.
    pub fn resolve<'a>(
        &self,
        k: usize,
        sets: impl IntoIterator<Item = &'a ImageLabelSet>,
    ) -> Result<PostprocessConfig> {
        self.validate(k)?;
        let bias = BiasModel::new(self.delta)?;
        let confusion = match &self.confusion {
            Some(c) => c.clone(),
            None => estimate_confusion(sets, k, bias)?,
        };
        Ok(PostprocessConfig {
            bias,
            confusion,
            blend_weight_beta: self.blend_weight_beta,
            skip_blend_threshold: self.skip_blend_threshold,
        })
    }
}

fn check_class(class: usize, k: usize) -> Result<()> {
    if class < k {
        Ok(())
    } else {
        Err(Error::ClassOutOfRange { class, k })
    }
}

/// Expected annotation distribution when `proposal` is shown:
/// `(1 - δ)·gt + δ·1_proposal`.
pub fn simulate_acceptance(gt: &ClassDistribution, proposal: usize, bias: BiasModel) -> Result<ClassDistribution> {
    check_class(proposal, gt.k())?;
    let d = bias.delta();
    let probs = gt
        .probs()
        .iter()
        .enumerate()
        .map(|(k, &p)| (1.0 - d) * p + if k == proposal { d } else { 0.0 })
        .map(|p| p.clamp(0.0, 1.0))
        .collect();
    ClassDistribution::new(probs)
}

/// Inverts [`simulate_acceptance`]. Entries pushed below zero by sampling
/// noise are clipped and the result renormalized.
pub fn bias_correct(observed: &ClassDistribution, proposal: usize, bias: BiasModel) -> Result<ClassDistribution> {
    let d = bias.delta();
    if d >= 1.0 {
        return Err(Error::CorrectionUndefined(d));
    }
    check_class(proposal, observed.k())?;
    let raw: Vec<f64> = observed
        .probs()
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let shifted = if k == proposal { p - d } else { p };
            (shifted / (1.0 - d)).max(0.0)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        // every vote went to the proposal and was fully explained by δ
        return ClassDistribution::one_hot(proposal, observed.k());
    }
    if (total - 1.0).abs() <= 1e-12 {
        // no clipping: keep the algebraic inverse untouched
        return ClassDistribution::new(raw.iter().map(|p| p.min(1.0)).collect());
    }
    ClassDistribution::from_weights(&raw)
}

/// Convex combination of `dist` with row `anchor` of the transition matrix.
pub fn class_blend(
    dist: &ClassDistribution,
    anchor: usize,
    annotations: usize,
    cfg: &PostprocessConfig,
) -> Result<ClassDistribution> {
    let c = &cfg.confusion;
    if c.k() != dist.k() {
        return Err(Error::ClassCountMismatch { expected: dist.k(), actual: c.k() });
    }
    check_class(anchor, dist.k())?;
    if annotations >= cfg.skip_blend_threshold {
        return Ok(dist.clone());
    }
    let lambda = cfg.blend_weight(annotations);
    let row = c.row(anchor);
    let probs: Vec<f64> =
        dist.probs().iter().zip(row).map(|(p, r)| (lambda * p + (1.0 - lambda) * r).clamp(0.0, 1.0)).collect();
    ClassDistribution::from_weights(&probs)
}

/// The proposal shared by every record of `labels`.
pub fn shared_proposal(labels: &ImageLabelSet) -> Result<usize> {
    match labels.proposal_mode() {
        ProposalMode::Single(p) => Ok(p),
        ProposalMode::None | ProposalMode::Mixed => Err(Error::MixedProposals),
    }
}

/// Aggregate, correct towards the shown proposal, then blend anchored at it.
pub fn cleverlabel(labels: &ImageLabelSet, cfg: &PostprocessConfig) -> Result<ClassDistribution> {
    if labels.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let proposal = shared_proposal(labels)?;
    let observed = aggregate(labels, cfg.k())?;
    let corrected = bias_correct(&observed, proposal, cfg.bias)?;
    class_blend(&corrected, proposal, labels.len(), cfg)
}

/// Aggregate, then blend anchored at the majority class.
pub fn blend_only(labels: &ImageLabelSet, cfg: &PostprocessConfig) -> Result<ClassDistribution> {
    let observed = aggregate(labels, cfg.k())?;
    class_blend(&observed, observed.majority_vote(), labels.len(), cfg)
}

/// Aggregate and correct without blending.
pub fn bias_correct_only(labels: &ImageLabelSet, cfg: &PostprocessConfig) -> Result<ClassDistribution> {
    if labels.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let proposal = shared_proposal(labels)?;
    bias_correct(&aggregate(labels, cfg.k())?, proposal, cfg.bias)
}

/// Post-processing methods that turn an image's annotations into a soft label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Raw,
    Cleverlabel,
    BlendOnly,
    BiasCorrectOnly,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Raw => "RAW",
            Method::Cleverlabel => "CLEVERLABEL",
            Method::BlendOnly => "BLEND_ONLY",
            Method::BiasCorrectOnly => "BIAS_CORRECT_ONLY",
        }
    }

    pub fn requires_proposals(&self) -> bool {
        matches!(self, Method::Cleverlabel | Method::BiasCorrectOnly)
    }

    pub fn apply(&self, labels: &ImageLabelSet, cfg: &PostprocessConfig) -> Result<ClassDistribution> {
        match self {
            Method::Raw => aggregate(labels, cfg.k()),
            Method::Cleverlabel => cleverlabel(labels, cfg),
            Method::BlendOnly => blend_only(labels, cfg),
            Method::BiasCorrectOnly => bias_correct_only(labels, cfg),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "RAW" => Ok(Method::Raw),
            "CLEVERLABEL" => Ok(Method::Cleverlabel),
            "BLEND_ONLY" => Ok(Method::BlendOnly),
            "BIAS_CORRECT_ONLY" => Ok(Method::BiasCorrectOnly),
            other => Err(Error::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
}

/// Paired observation of one image's proposal class with and without the
/// proposal being shown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaPair {
    pub proposal: usize,
    pub p_with: ClassDistribution,
    pub p_without: ClassDistribution,
}

/// Mean per-image acceptance offset. Pairs whose unbiased probability of
/// the proposal is already one carry no information and are skipped.
pub fn estimate_delta(pairs: &[DeltaPair]) -> Result<f64> {
    let mut estimates = Vec::with_capacity(pairs.len());
    for pair in pairs {
        check_class(pair.proposal, pair.p_with.k())?;
        if pair.p_with.k() != pair.p_without.k() {
            return Err(Error::ClassCountMismatch { expected: pair.p_without.k(), actual: pair.p_with.k() });
        }
        let without = pair.p_without.get(pair.proposal);
        if without >= 1.0 {
            continue;
        }
        let with = pair.p_with.get(pair.proposal);
        estimates.push(((with - without) / (1.0 - without)).clamp(0.0, 1.0));
    }
    if estimates.is_empty() {
        return Err(Error::InvalidInput("every pair is degenerate".into()));
    }
    Ok(estimates.iter().sum::<f64>() / estimates.len() as f64)
}

/// Estimates the class-transition matrix from annotated images.
///
/// Row `j` accumulates the annotation counts of every image whose majority
/// class is `j`. Only images annotated without proposals are used when any
/// exist; otherwise proposal images contribute their bias-corrected
/// distributions weighted by annotation count. Rows without any image fall
/// back to the identity.
pub fn estimate_confusion<'a>(
    sets: impl IntoIterator<Item = &'a ImageLabelSet>,
    k: usize,
    bias: BiasModel,
) -> Result<ConfusionMatrix> {
    let mut plain = vec![vec![0.0; k]; k];
    let mut corrected = vec![vec![0.0; k]; k];
    let mut have_plain = false;
    for set in sets {
        if set.is_empty() {
            continue;
        }
        match set.proposal_mode() {
            ProposalMode::None => {
                let counts = set.class_counts(k)?;
                let d = aggregate(set, k)?;
                for (target, c) in plain[d.majority_vote()].iter_mut().zip(&counts) {
                    *target += *c as f64;
                }
                have_plain = true;
            }
            ProposalMode::Single(rho) => {
                let d = bias_correct(&aggregate(set, k)?, rho, bias)?;
                let n = set.len() as f64;
                for (target, p) in corrected[d.majority_vote()].iter_mut().zip(d.probs()) {
                    *target += n * p;
                }
            }
            ProposalMode::Mixed => {}
        }
    }
    let acc = if have_plain { plain } else { corrected };
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
