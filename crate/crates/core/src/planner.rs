//! Campaign planning: the strategy decision engine plus the workload and
//! confidence-interval arithmetic used to size `A_cons` and `A_full`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_model::ClassDistribution;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

fn default_min_fraction() -> f64 {
    0.01
}

/// Inputs to [`recommend_strategy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyInputs {
    /// Number of images selected for annotation.
    pub n_images: u64,
    #[serde(default)]
    pub class_prevalence: Option<ClassDistribution>,
    pub bias_acceptable: bool,
    /// Expected throughput ratio with proposals over without.
    pub expected_speedup: f64,
    /// Size of the gold subset relative to the annotated subset.
    pub labeled_subset_fraction: f64,
    pub annotator_pool: u32,
    #[serde(default = "default_min_fraction")]
    pub per_class_min_fraction: f64,
    #[serde(default)]
    pub raw_pool_size: Option<u64>,
}

/// Tunable thresholds of the decision engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerThresholds {
    /// Speedup at or above which proposals pay off when bias is unacceptable.
    pub speedup: f64,
    /// Largest-class prevalence above which a class "dominates".
    pub dominance: f64,
    /// Largest class count still considered "few classes".
    pub max_browsing_classes: usize,
    /// Raw pool size above which self-supervised pretraining is suggested.
    pub self_supervision_pool: u64,
    /// Recommended gold subset fraction.
    pub gold_fraction: f64,
}

impl Default for PlannerThresholds {
    fn default() -> Self {
        Self {
            speedup: 3.0,
            dominance: 0.5,
            max_browsing_classes: 10,
            self_supervision_pool: 100_000,
            gold_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Postprocessing {
    Cleverlabel,
    BlendOnly,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PlatformHint {
    BrowsingGrid,
    Sequential,
}

/// One audited branch of the decision engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleStep {
    pub decision_point: String,
    pub branch: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRecommendation {
    pub use_proposals: bool,
    pub postprocessing: Postprocessing,
    pub platform_hint: PlatformHint,
    pub warnings: Vec<String>,
    pub rationale_trail: Vec<RationaleStep>,
}

impl StrategyRecommendation {
    /// One-line human summary, e.g. `annotate WITHOUT proposals; post-process: BLEND_ONLY`.
    pub fn summary(&self) -> String {
        let post = match self.postprocessing {
            Postprocessing::Cleverlabel => "CLEVERLABEL",
            Postprocessing::BlendOnly => "BLEND_ONLY",
            Postprocessing::None => "NONE",
        };
        let mode = if self.use_proposals { "WITH" } else { "WITHOUT" };
        format!("annotate {mode} proposals; post-process: {post}")
    }
}

struct Trail(Vec<RationaleStep>);

impl Trail {
    fn push(&mut self, point: &str, branch: &str, reason: String) {
        self.0.push(RationaleStep { decision_point: point.into(), branch: branch.into(), reason });
    }
}

pub fn recommend_strategy(inputs: &StrategyInputs) -> Result<StrategyRecommendation> {
    recommend_strategy_with(inputs, &PlannerThresholds::default())
}

pub fn recommend_strategy_with(
    inputs: &StrategyInputs,
    thresholds: &PlannerThresholds,
) -> Result<StrategyRecommendation> {
    if inputs.n_images == 0 {
        return Err(Error::InvalidInput("n_images must be positive".into()));
    }
    if inputs.expected_speedup.is_nan() || inputs.expected_speedup <= 0.0 {
        return Err(Error::InvalidInput("expected_speedup must be positive".into()));
    }
    if !(0.0..=1.0).contains(&inputs.labeled_subset_fraction) {
        return Err(Error::InvalidInput("labeled_subset_fraction must lie in [0, 1]".into()));
    }

    let mut warnings = Vec::new();
    let mut trail = Trail(Vec::new());

    match &inputs.class_prevalence {
        Some(prev) => {
            let rare: Vec<usize> = (0..prev.k()).filter(|&k| prev.get(k) < inputs.per_class_min_fraction).collect();
            if rare.is_empty() {
                trail.push(
                    "class-coverage",
                    "sufficient",
                    format!("every class reaches {} of the data", inputs.per_class_min_fraction),
                );
            } else {
                warnings.push(format!(
                    "classes {rare:?} fall below {} of the data; consider few- or zero-shot methods",
                    inputs.per_class_min_fraction
                ));
                trail.push(
                    "class-coverage",
                    "few-shot-advisory",
                    format!("classes {rare:?} below the per-class minimum"),
                );
            }
        }
        None => trail.push("class-coverage", "unknown", "no class prevalence estimate supplied".into()),
    }

    match inputs.raw_pool_size {
        Some(raw) if raw > thresholds.self_supervision_pool && raw > inputs.n_images => {
            warnings.push(format!(
                "raw pool of {raw} images exceeds {}; self-supervised pretraining may help",
                thresholds.self_supervision_pool
            ));
            trail.push(
                "raw-pool-size",
                "self-supervision-advisory",
                format!("raw pool {raw} above {}", thresholds.self_supervision_pool),
            );
        }
        Some(raw) => trail.push(
            "raw-pool-size",
            "manageable",
            format!("raw pool {raw} within {}", thresholds.self_supervision_pool),
        ),
        None => trail.push("raw-pool-size", "unknown", "no raw pool size supplied".into()),
    }

    if inputs.labeled_subset_fraction < thresholds.gold_fraction {
        warnings.push(format!(
            "gold subset is {:.1}% of the annotated data; about {:.0}% is recommended",
            inputs.labeled_subset_fraction * 100.0,
            thresholds.gold_fraction * 100.0
        ));
        trail.push(
            "gold-subset",
            "small",
            format!("fraction {} below {}", inputs.labeled_subset_fraction, thresholds.gold_fraction),
        );
    } else {
        trail.push(
            "gold-subset",
            "adequate",
            format!("fraction {} reaches {}", inputs.labeled_subset_fraction, thresholds.gold_fraction),
        );
    }

    let platform_hint = match &inputs.class_prevalence {
        Some(prev) => {
            let largest = prev.get(prev.majority_vote());
            if prev.k() <= thresholds.max_browsing_classes && largest > thresholds.dominance {
                trail.push(
                    "platform",
                    "browsing-grid",
                    format!("{} classes, largest prevalence {largest} above {}", prev.k(), thresholds.dominance),
                );
                PlatformHint::BrowsingGrid
            } else {
                trail.push(
                    "platform",
                    "sequential",
                    format!("{} classes, largest prevalence {largest}; no dominant class among few", prev.k()),
                );
                PlatformHint::Sequential
            }
        }
        None => {
            trail.push("platform", "sequential", "no class prevalence estimate supplied".into());
            PlatformHint::Sequential
        }
    };

    let use_proposals = if inputs.bias_acceptable {
        trail.push("bias-acceptable", "yes", "proposal bias is tolerable, so proposals are used".into());
        true
    } else {
        trail.push("bias-acceptable", "no", "proposal bias is not tolerable; speedup decides".into());
        let s = inputs.expected_speedup;
        if s >= thresholds.speedup {
            trail.push(
                "speedup",
                "above-threshold",
                format!("speedup {s} >= {}: the bias can be reversed within budget", thresholds.speedup),
            );
            true
        } else {
            trail.push(
                "speedup",
                "below-threshold",
                format!("speedup {s} < {}: annotate without proposals", thresholds.speedup),
            );
            false
        }
    };

    let postprocessing = if use_proposals {
        trail.push("postprocessing", "cleverlabel", "proposals used: correct the bias and blend".into());
        Postprocessing::Cleverlabel
    } else {
        trail.push("postprocessing", "blend-only", "no proposals: blend with the class transition matrix".into());
        Postprocessing::BlendOnly
    };

    Ok(StrategyRecommendation { use_proposals, postprocessing, platform_hint, warnings, rationale_trail: trail.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadInputs {
    pub n_images: u64,
    /// Expected share of images reaching consensus after `annotations_consensus`.
    pub consensus_fraction: f64,
    pub annotations_consensus: u32,
    pub annotations_full: u32,
    pub annotations_per_hour: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadEstimate {
    pub expected_annotations: f64,
    pub hours: f64,
}

impl WorkloadEstimate {
    pub fn hours_per_annotator(&self, annotators: u32) -> f64 {
        self.hours / annotators.max(1) as f64
    }
}

pub fn estimate_workload(inputs: &WorkloadInputs) -> Result<WorkloadEstimate> {
    if inputs.annotations_per_hour.is_nan() || inputs.annotations_per_hour <= 0.0 {
        return Err(Error::InvalidInput("annotations_per_hour must be positive".into()));
    }
    if !(0.0..=1.0).contains(&inputs.consensus_fraction) {
        return Err(Error::InvalidInput("consensus_fraction must lie in [0, 1]".into()));
    }
    if inputs.annotations_consensus == 0 || inputs.annotations_consensus > inputs.annotations_full {
        return Err(Error::InvalidInput("need 0 < annotations_consensus <= annotations_full".into()));
    }
    let pc = inputs.consensus_fraction;
    let per_image = pc * inputs.annotations_consensus as f64 + (1.0 - pc) * inputs.annotations_full as f64;
    let expected_annotations = inputs.n_images as f64 * per_image;
    Ok(WorkloadEstimate { expected_annotations, hours: expected_annotations / inputs.annotations_per_hour })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// Unclamped width `2 z sqrt(p (1 - p) / A)`.
    pub width: f64,
}

/// Confidence question about one class probability.
///
/// Set `n_annotations` to ask for an interval, or `width` to ask how many
/// annotations guarantee it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceQuery {
    pub p: f64,
    #[serde(default)]
    pub n_annotations: Option<u32>,
    #[serde(default)]
    pub width: Option<f64>,
    #[serde(default = "default_z")]
    pub z: f64,
}

fn default_z() -> f64 {
    Z_95
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfidenceAnswer {
    Interval(Interval),
    Annotations { annotations: u32 },
}

impl ConfidenceQuery {
    pub fn answer(&self) -> Result<ConfidenceAnswer> {
        match (self.n_annotations, self.width) {
            (Some(a), None) => wald_interval(self.p, a, self.z).map(ConfidenceAnswer::Interval),
            (None, Some(w)) => {
                required_annotations(self.p, w, self.z).map(|annotations| ConfidenceAnswer::Annotations { annotations })
            }
            _ => Err(Error::InvalidInput("set exactly one of n_annotations and width".into())),
        }
    }
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("p must lie in (0, 1), got {p}")))
    }
}

/// Wald interval for a class probability estimated from `annotations` votes.
pub fn wald_interval(p: f64, annotations: u32, z: f64) -> Result<Interval> {
    check_probability(p)?;
    if annotations == 0 {
        return Err(Error::InvalidInput("at least one annotation required".into()));
    }
    let half = z * (p * (1.0 - p) / annotations as f64).sqrt();
    Ok(Interval { lower: (p - half).max(0.0), upper: (p + half).min(1.0), width: 2.0 * half })
}

/// Relative slack under which a formula value is treated as the nearby
/// integer rather than rounded up. Widths quoted to four decimals would
/// otherwise overshoot by one.
const CEIL_SLACK: f64 = 1e-4;

/// Annotations needed for a Wald interval of total width `width`.
pub fn required_annotations(p: f64, width: f64, z: f64) -> Result<u32> {
    check_probability(p)?;
    if !(width > 0.0 && width <= 1.0) {
        return Err(Error::InvalidInput(format!("width must lie in (0, 1], got {width}")));
    }
    let exact = 4.0 * z * z * p * (1.0 - p) / (width * width);
    let nearest = exact.round();
    let a = if (exact - nearest).abs() <= CEIL_SLACK * exact { nearest } else { exact.ceil() };
    Ok(a.max(1.0) as u32)
}

/// Interval `(0.25^(1/A), 1)` for a class probability close to one.
pub fn near_one_interval(annotations: u32) -> Result<Interval> {
    if annotations == 0 {
        return Err(Error::InvalidInput("at least one annotation required".into()));
    }
    let lower = 0.25f64.powf(1.0 / annotations as f64);
    Ok(Interval { lower, upper: 1.0, width: 1.0 - lower })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub(crate) fn verse_like(bias_acceptable: bool, speedup: f64) -> StrategyInputs {
        StrategyInputs {
            n_images: 3761,
            class_prevalence: None,
            bias_acceptable,
            expected_speedup: speedup,
            labeled_subset_fraction: 0.2,
            annotator_pool: 5,
            per_class_min_fraction: 0.01,
            raw_pool_size: None,
        }
    }

    #[test]
    fn decision_examples() {
        let r = recommend_strategy(&verse_like(true, 1.1636)).unwrap();
        assert!(r.use_proposals);
        assert_eq!(r.postprocessing, Postprocessing::Cleverlabel);

        let r = recommend_strategy(&verse_like(false, 1.1636)).unwrap();
        assert!(!r.use_proposals);
        assert_eq!(r.postprocessing, Postprocessing::BlendOnly);
        assert_eq!(r.summary(), "annotate WITHOUT proposals; post-process: BLEND_ONLY");

        let r = recommend_strategy(&verse_like(false, 4.4319)).unwrap();
        assert!(r.use_proposals);
    }

    #[test]
    fn rejects_invalid_inputs() {
        let mut i = verse_like(false, 2.0);
        i.n_images = 0;
        assert!(recommend_strategy(&i).is_err());
        let i = verse_like(false, 0.0);
        assert!(recommend_strategy(&i).is_err());
    }

    #[test]
    fn warnings_do_not_change_decisions() {
        let mut i = verse_like(false, 1.5);
        let base = recommend_strategy(&i).unwrap();
        i.class_prevalence = Some(ClassDistribution::new(vec![0.995, 0.005]).unwrap());
        i.raw_pool_size = Some(5_000_000);
        let r = recommend_strategy(&i).unwrap();
        assert_eq!(r.warnings.len(), 2);
        assert_eq!(r.use_proposals, base.use_proposals);
        assert_eq!(r.postprocessing, base.postprocessing);
        assert_eq!(r.platform_hint, PlatformHint::BrowsingGrid);
    }

    #[test]
    fn platform_hint_needs_dominant_class() {
        let mut i = verse_like(true, 1.0);
        i.class_prevalence = Some(ClassDistribution::new(vec![0.4, 0.3, 0.3]).unwrap());
        assert_eq!(recommend_strategy(&i).unwrap().platform_hint, PlatformHint::Sequential);
    }

    #[test]
    fn workload_examples() {
        let w = estimate_workload(&WorkloadInputs {
            n_images: 10_000,
            consensus_fraction: 0.5,
            annotations_consensus: 10,
            annotations_full: 50,
            annotations_per_hour: 3000.0,
        })
        .unwrap();
        assert_abs_diff_eq!(w.expected_annotations, 300_000.0);
        assert_abs_diff_eq!(w.hours, 100.0);

        let w = estimate_workload(&WorkloadInputs {
            n_images: 3761,
            consensus_fraction: 1.0,
            annotations_consensus: 10,
            annotations_full: 50,
            annotations_per_hour: 1.0,
        })
        .unwrap();
        assert_abs_diff_eq!(w.expected_annotations, 37_610.0);
    }

    #[test]
    fn workload_rejects_nonpositive_rate() {
        let w = WorkloadInputs {
            n_images: 1,
            consensus_fraction: 0.5,
            annotations_consensus: 10,
            annotations_full: 50,
            annotations_per_hour: 0.0,
        };
        assert!(estimate_workload(&w).is_err());
    }

    #[test]
    fn wald_examples() {
        assert_abs_diff_eq!(wald_interval(0.5, 10, Z_95).unwrap().width, 0.6198, epsilon = 1e-4);
        assert_abs_diff_eq!(wald_interval(0.5, 50, Z_95).unwrap().width, 0.2772, epsilon = 1e-4);
        let i = wald_interval(0.5, 3, Z_95).unwrap();
        assert_abs_diff_eq!(i.width, 1.1316, epsilon = 1e-4);
        assert_eq!((i.lower, i.upper), (0.0, 1.0));
        assert!(wald_interval(0.5, 0, Z_95).is_err());
    }

    #[test]
    fn required_annotation_examples() {
        assert_eq!(required_annotations(0.5, 0.28, Z_95).unwrap(), 49);
        assert_eq!(required_annotations(0.5, 0.6198, Z_95).unwrap(), 10);
        assert!(required_annotations(0.5, 0.0, Z_95).is_err());
        let grid: Vec<u32> = (1..10).map(|i| required_annotations(i as f64 / 10.0, 0.3, Z_95).unwrap()).collect();
        let max = *grid.iter().max().unwrap();
        assert_eq!(grid[4], max);
    }

    #[test]
    fn query_requires_exactly_one_target() {
        let q = ConfidenceQuery { p: 0.5, n_annotations: Some(10), width: Some(0.3), z: Z_95 };
        assert!(q.answer().is_err());
        let q = ConfidenceQuery { p: 0.5, n_annotations: None, width: Some(0.28), z: Z_95 };
        assert_eq!(q.answer().unwrap(), ConfidenceAnswer::Annotations { annotations: 49 });
    }

    #[test]
    fn near_one_examples() {
        assert_abs_diff_eq!(near_one_interval(3).unwrap().lower, 0.63, epsilon = 0.005);
        assert_abs_diff_eq!(near_one_interval(10).unwrap().lower, 0.87, epsilon = 0.005);
        assert_abs_diff_eq!(near_one_interval(50).unwrap().lower, 0.97, epsilon = 0.005);
        assert!(near_one_interval(0).is_err());
    }

    #[test]
    fn near_one_is_increasing() {
        let lows: Vec<f64> = (1..500).map(|a| near_one_interval(a).unwrap().lower).collect();
        assert!(lows.windows(2).all(|w| w[0] < w[1]));
        assert!(1.0 - lows.last().unwrap() < 0.003);
    }

    #[test]
    fn wald_round_trip() {
        for p in [0.2, 0.5, 0.8] {
            for a in 5..=200u32 {
                let w = wald_interval(p, a, Z_95).unwrap().width;
                let back = required_annotations(p, w.min(1.0), Z_95).unwrap();
                if w <= 1.0 {
                    assert!(back.abs_diff(a) <= 1, "p={p} a={a} back={back}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn proposals_monotone_in_speedup(s in 0.01f64..10.0, extra in 0.0f64..10.0) {
            let lo = recommend_strategy(&verse_like(false, s)).unwrap();
            let hi = recommend_strategy(&verse_like(false, s + extra)).unwrap();
            prop_assert!(!lo.use_proposals || hi.use_proposals);
            prop_assert_eq!(recommend_strategy(&verse_like(false, s)).unwrap(), lo);
        }

        #[test]
        fn workload_linear_and_decreasing(n in 1u64..100_000, pc in 0.0f64..1.0, dpc in 0.0f64..1.0) {
            let w = |n, pc| estimate_workload(&WorkloadInputs {
                n_images: n,
                consensus_fraction: pc,
                annotations_consensus: 10,
                annotations_full: 50,
                annotations_per_hour: 2500.0,
            }).unwrap().expected_annotations;
            let base = w(n, pc);
            prop_assert!((w(2 * n, pc) - 2.0 * base).abs() < 1e-6 * base.max(1.0));
            let pc2 = (pc + dpc).min(1.0);
            prop_assert!(w(n, pc2) <= base + 1e-9);
        }
    }
}
