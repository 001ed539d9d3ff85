use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use super::rng::stream;
use crate::error::{Error, Result};
use crate::label_model::ClassDistribution;

/// One simulated image with its ground-truth soft label and proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticImage {
    pub image_id: String,
    pub gt: ClassDistribution,
    pub proposal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub images: Vec<SyntheticImage>,
    pub k: usize,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn new(images: Vec<SyntheticImage>, k: usize, seed: u64) -> Result<Self> {
        let mut ids = std::collections::BTreeSet::new();
        for img in &images {
            if img.gt.k() != k {
                return Err(Error::ClassCountMismatch { expected: k, actual: img.gt.k() });
            }
            if img.proposal >= k {
                return Err(Error::ClassOutOfRange { class: img.proposal, k });
            }
            if !ids.insert(img.image_id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate image id {}", img.image_id)));
            }
        }
        Ok(Self { images, k, seed })
    }

    pub fn generate(params: &GeneratorParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let k = params.k;
        let prevalence: Vec<f64> = match &params.class_prevalence {
            Some(p) => p.clone(),
            None => vec![1.0; k],
        };
        let primary_dist =
            WeightedIndex::new(&prevalence).map_err(|e| Error::InvalidInput(format!("class_prevalence: {e}")))?;
        let width = (params.n_images.max(1) - 1).to_string().len();
        let images = (0..params.n_images)
            .map(|i| {
                let image_id = format!("img-{i:0width$}");
                let mut rng = stream(seed, "dataset", &image_id);
                let primary = primary_dist.sample(&mut rng);
                let gt = params.shape.sample_gt(primary, k, params.consensus_share, &mut rng)?;
                let proposal = if rng.random::<f64>() < params.proposal_accuracy {
                    gt.majority_vote()
                } else {
                    let other = rng.random_range(0..k - 1);
                    if other >= gt.majority_vote() {
                        other + 1
                    } else {
                        other
                    }
                };
                Ok(SyntheticImage { image_id, gt, proposal })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(images, k, seed)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Shape of the ambiguous (non-consensus) ground truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GtShape {
    /// Mass split between the primary class and one neighbouring class,
    /// as for ordinal grades. The neighbour receives a share drawn
    /// uniformly from `[min_minor, max_minor]`.
    Ordinal { min_minor: f64, max_minor: f64 },
    /// Symmetric Dirichlet draw over all classes; small values are sharp.
    Dirichlet { concentration: f64 },
}

impl GtShape {
    fn sample_gt<R: Rng>(
        &self,
        primary: usize,
        k: usize,
        consensus_share: f64,
        rng: &mut R,
    ) -> Result<ClassDistribution> {
        let ambiguous = rng.random::<f64>() >= consensus_share;
        if !ambiguous {
            return ClassDistribution::one_hot(primary, k);
        }
        match *self {
            GtShape::Ordinal { min_minor, max_minor } => {
                let minor = if max_minor > min_minor { rng.random_range(min_minor..=max_minor) } else { min_minor };
                let neighbour = if primary == 0 {
                    1
                } else if primary == k - 1 || rng.random::<bool>() {
                    primary - 1
                } else {
                    primary + 1
                };
                let mut probs = vec![0.0; k];
                probs[primary] = 1.0 - minor;
                probs[neighbour] = minor;
                ClassDistribution::new(probs)
            }
            GtShape::Dirichlet { concentration } => {
                // normalized Gamma(α, 1) draws are Dirichlet(α, ..., α)
                let gamma =
                    Gamma::new(concentration, 1.0).map_err(|e| Error::InvalidInput(format!("concentration: {e}")))?;
                let draw: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
                ClassDistribution::from_weights(&draw)
            }
        }
    }
}

/// Parameters for [`SyntheticDataset::generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub k: usize,
    pub n_images: usize,
    /// Relative weights of each image's primary class; uniform when absent.
    pub class_prevalence: Option<Vec<f64>>,
    /// Share of images whose ground truth is one-hot.
    pub consensus_share: f64,
    pub shape: GtShape,
    /// Probability that the proposal equals the ground-truth majority class;
    /// otherwise a uniformly drawn other class is proposed.
    pub proposal_accuracy: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            k: 4,
            n_images: 200,
            class_prevalence: None,
            consensus_share: 0.9,
            shape: GtShape::Ordinal { min_minor: 0.35, max_minor: 0.5 },
            proposal_accuracy: 0.7,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidInput("k must be at least 2".into()));
        }
        if let Some(p) = &self.class_prevalence {
            if p.len() != self.k {
                return Err(Error::ClassCountMismatch { expected: self.k, actual: p.len() });
            }
        }
        for (name, v) in [("consensus_share", self.consensus_share), ("proposal_accuracy", self.proposal_accuracy)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{name} must lie in [0, 1]")));
            }
        }
        match self.shape {
            GtShape::Ordinal { min_minor, max_minor } => {
                if !(0.0 <= min_minor && min_minor <= max_minor && max_minor <= 0.5) {
                    return Err(Error::InvalidInput("ordinal shape needs 0 <= min_minor <= max_minor <= 0.5".into()));
                }
            }
            GtShape::Dirichlet { concentration } => {
                if concentration.is_nan() || concentration <= 0.0 {
                    return Err(Error::InvalidInput("concentration must be positive".into()));
                }
            }
        }
        Ok(())
    }
}
