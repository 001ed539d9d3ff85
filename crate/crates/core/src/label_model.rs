//! Soft and hard labels, annotation records, and the label-quality metrics
//! used throughout the toolkit.
//!
//! A soft label is the empirical distribution of the classes annotators
//! chose for one image. Hard labels are the one-hot special case.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the sum-to-one invariant of [`ClassDistribution`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Floor applied to the estimate before taking logarithms in
/// [`kl_divergence`].
pub const KL_EPSILON: f64 = 1e-8;

/// Normalized probability vector over `K >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!("need at least 2 classes, got {}", probs.len())));
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidDistribution(format!("entry {bad} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}, expected 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        Self::new(weights.iter().map(|w| (w / total).min(1.0)).collect())
    }

    pub fn one_hot(class: usize, k: usize) -> Result<Self> {
        if class >= k {
            return Err(Error::ClassOutOfRange { class, k });
        }
        let mut probs = vec![0.0; k];
        probs[class] = 1.0;
        Self::new(probs)
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, class: usize) -> f64 {
        self.probs[class]
    }

    /// Index of the most probable class. Ties go to the lowest index.
    pub fn majority_vote(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = k;
            }
        }
        best
    }

    /// Annotator uncertainty, `1 - max_k p_k`. Lies in `[0, 1 - 1/K]`.
    pub fn uncertainty(&self) -> f64 {
        1.0 - self.probs[self.majority_vote()]
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.probs.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
    }
}

impl TryFrom<Vec<f64>> for ClassDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<ClassDistribution> for Vec<f64> {
    fn from(dist: ClassDistribution) -> Self {
        dist.probs
    }
}

pub fn majority_vote(dist: &ClassDistribution) -> usize {
    dist.majority_vote()
}

pub fn uncertainty(dist: &ClassDistribution) -> f64 {
    dist.uncertainty()
}

/// One annotator's class choice for one image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub annotator_id: String,
    pub chosen_class: usize,
    #[serde(default)]
    pub proposal_shown: Option<usize>,
    pub timestamp_ms: u64,
    pub batch_id: String,
}

impl AnnotationRecord {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.chosen_class >= k {
            return Err(Error::ClassOutOfRange { class: self.chosen_class, k });
        }
        if let Some(p) = self.proposal_shown {
            if p >= k {
                return Err(Error::ClassOutOfRange { class: p, k });
            }
        }
        Ok(())
    }
}

/// How the proposals shown for one image's records relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalMode {
    /// No record carries a proposal.
    None,
    /// Every record was shown the same proposal.
    Single(usize),
    /// Some records had a proposal and others had a different one or none.
    Mixed,
}

/// All annotation records collected for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageLabelSet {
    image_id: String,
    records: Vec<AnnotationRecord>,
}

impl ImageLabelSet {
    pub fn new(image_id: impl Into<String>, records: Vec<AnnotationRecord>) -> Result<Self> {
        let image_id = image_id.into();
        if let Some(r) = records.iter().find(|r| r.image_id != image_id) {
            return Err(Error::MixedImages(image_id, r.image_id.clone()));
        }
        Ok(Self { image_id, records })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<AnnotationRecord> {
        self.records
    }

    pub fn proposal_mode(&self) -> ProposalMode {
        let mut shown = self.records.iter().map(|r| r.proposal_shown);
        let Some(first) = shown.next() else {
            return ProposalMode::None;
        };
        if shown.any(|p| p != first) {
            return ProposalMode::Mixed;
        }
        match first {
            Some(p) => ProposalMode::Single(p),
            None => ProposalMode::None,
        }
    }

    /// Flags sets mixing records with and without proposals.
    pub fn is_mixed(&self) -> bool {
        self.proposal_mode() == ProposalMode::Mixed
    }

    pub fn class_counts(&self, k: usize) -> Result<Vec<usize>> {
        let mut counts = vec![0usize; k];
        for r in &self.records {
            if r.chosen_class >= k {
                return Err(Error::ClassOutOfRange { class: r.chosen_class, k });
            }
            counts[r.chosen_class] += 1;
        }
        Ok(counts)
    }
}

/// Groups records by image, keyed and ordered by image id.
pub fn group_by_image(
    records: impl IntoIterator<Item = AnnotationRecord>,
) -> std::collections::BTreeMap<String, ImageLabelSet> {
    let mut grouped: std::collections::BTreeMap<String, Vec<AnnotationRecord>> = std::collections::BTreeMap::new();
    for r in records {
        grouped.entry(r.image_id.clone()).or_default().push(r);
    }
    grouped
        .into_iter()
        .map(|(id, recs)| {
            let set = ImageLabelSet { image_id: id.clone(), records: recs };
            (id, set)
        })
        .collect()
}

/// Row-stochastic `K x K` class-transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ConfusionMatrix {
    rows: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::InvalidConfusion(format!("need at least 2 rows, got {k}")));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidConfusion(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidConfusion(format!("row {i} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidConfusion(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(k: usize) -> Result<Self> {
        Self::new((0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect())
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.rows[class]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// True when every row's maximum sits on the diagonal.
    pub fn is_diagonally_dominant(&self) -> bool {
        self.rows.iter().enumerate().all(|(i, row)| row.iter().all(|&p| p <= row[i]))
    }
}

impl TryFrom<Vec<Vec<f64>>> for ConfusionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<ConfusionMatrix> for Vec<Vec<f64>> {
    fn from(m: ConfusionMatrix) -> Self {
        m.rows
    }
}

/// Averages the annotations of one image into a soft label.
pub fn aggregate(labels: &ImageLabelSet, k: usize) -> Result<ClassDistribution> {
    if labels.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let counts = labels.class_counts(k)?;
    let total = labels.len() as f64;
    ClassDistribution::new(counts.iter().map(|&c| c as f64 / total).collect())
}

/// `KL(reference || estimate)` in nats.
///
/// The estimate is floored at [`KL_EPSILON`] and renormalized so that
/// classes the estimate misses cost a large but finite penalty.
pub fn kl_divergence(reference: &ClassDistribution, estimate: &ClassDistribution) -> Result<f64> {
    if reference.k() != estimate.k() {
        return Err(Error::ClassCountMismatch { expected: reference.k(), actual: estimate.k() });
    }
    let floored: Vec<f64> = estimate.probs.iter().map(|q| q.max(KL_EPSILON)).collect();
    let norm: f64 = floored.iter().sum();
    let kl: f64 =
        reference.probs.iter().zip(&floored).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (p / (q / norm)).ln()).sum();
    Ok(kl.max(0.0))
}

struct ClassTally {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn tally(predictions: &[usize], truths: &[usize], k: usize) -> Result<Vec<ClassTally>> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch(predictions.len(), truths.len()));
    }
    if predictions.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let mut tallies: Vec<ClassTally> = (0..k).map(|_| ClassTally { tp: 0, fp: 0, fn_: 0 }).collect();
    for (&p, &t) in predictions.iter().zip(truths) {
        for c in [p, t] {
            if c >= k {
                return Err(Error::ClassOutOfRange { class: c, k });
            }
        }
        if p == t {
            tallies[p].tp += 1;
        } else {
            tallies[p].fp += 1;
            tallies[t].fn_ += 1;
        }
    }
    Ok(tallies)
}

/// Unweighted mean of per-class F1.
///
/// Classes that appear in neither `predictions` nor `truths` have undefined
/// precision and recall and are left out of the mean.
pub fn macro_f1(predictions: &[usize], truths: &[usize], k: usize) -> Result<f64> {
    let tallies = tally(predictions, truths, k)?;
    let scores: Vec<f64> = tallies
        .iter()
        .filter(|t| t.tp + t.fp + t.fn_ > 0)
        .map(|t| 2.0 * t.tp as f64 / (2 * t.tp + t.fp + t.fn_) as f64)
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Unweighted mean of per-class recall over the classes present in `truths`.
pub fn macro_accuracy(predictions: &[usize], truths: &[usize], k: usize) -> Result<f64> {
    let tallies = tally(predictions, truths, k)?;
    let recalls: Vec<f64> =
        tallies.iter().filter(|t| t.tp + t.fn_ > 0).map(|t| t.tp as f64 / (t.tp + t.fn_) as f64).collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}
