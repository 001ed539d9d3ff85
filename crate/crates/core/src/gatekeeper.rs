//! Annotator qualification against the gold subset.
//!
//! Annotators start in training, qualify after enough iterations that clear
//! the threshold `μ` on every configured metric, and are only ever excluded
//! by explicit operator action. A qualified annotator whose recent scores
//! slip below `μ` is flagged for review but keeps their status.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_model::{macro_accuracy, macro_f1, AnnotationRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GateMetric {
    MacroF1,
    MacroAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub mu: f64,
    pub required_passing_iterations: usize,
    pub metrics: BTreeSet<GateMetric>,
    /// Require at least one passing iteration with and one without proposals.
    pub require_both_proposal_modes: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            mu: 0.6,
            required_passing_iterations: 2,
            metrics: [GateMetric::MacroF1, GateMetric::MacroAccuracy].into(),
            require_both_proposal_modes: true,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::InvalidInput(format!("mu must lie in (0, 1], got {}", self.mu)));
        }
        if self.metrics.is_empty() {
            return Err(Error::InvalidInput("at least one gate metric required".into()));
        }
        Ok(())
    }

    pub fn passes(&self, scores: &IterationScores) -> bool {
        self.metrics.iter().all(|m| scores.get(*m) >= self.mu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationScores {
    pub macro_f1: f64,
    pub macro_accuracy: f64,
}

impl IterationScores {
    pub fn get(&self, metric: GateMetric) -> f64 {
        match metric {
            GateMetric::MacroF1 => self.macro_f1,
            GateMetric::MacroAccuracy => self.macro_accuracy,
        }
    }
}

/// Scores one iteration of gold annotations.
pub fn score_iteration(
    records: &[AnnotationRecord],
    gold: &BTreeMap<String, usize>,
    k: usize,
) -> Result<IterationScores> {
    let mut predictions = Vec::with_capacity(records.len());
    let mut truths = Vec::with_capacity(records.len());
    for r in records {
        let truth = gold
            .get(&r.image_id)
            .ok_or_else(|| Error::InvalidInput(format!("image {} has no gold label", r.image_id)))?;
        predictions.push(r.chosen_class);
        truths.push(*truth);
    }
    Ok(IterationScores {
        macro_f1: macro_f1(&predictions, &truths, k)?,
        macro_accuracy: macro_accuracy(&predictions, &truths, k)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnnotatorStatus {
    Training,
    Qualified,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub iteration_id: String,
    pub with_proposals: bool,
    pub macro_f1: f64,
    pub macro_accuracy: f64,
    pub minutes_spent: f64,
}

impl Iteration {
    pub fn scores(&self) -> IterationScores {
        IterationScores { macro_f1: self.macro_f1, macro_accuracy: self.macro_accuracy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorLedger {
    pub annotator_id: String,
    pub iterations: Vec<Iteration>,
    pub status: AnnotatorStatus,
    /// Set when a qualified annotator's last three iterations average below `μ`.
    #[serde(default)]
    pub review_advised: bool,
    #[serde(default)]
    pub exclusion_reason: Option<String>,
}

impl AnnotatorLedger {
    pub fn new(annotator_id: impl Into<String>) -> Self {
        Self {
            annotator_id: annotator_id.into(),
            iterations: Vec::new(),
            status: AnnotatorStatus::Training,
            review_advised: false,
            exclusion_reason: None,
        }
    }

    pub fn is_excluded(&self) -> bool {
        self.status == AnnotatorStatus::Excluded
    }

    /// Operator action; terminal.
    pub fn exclude(mut self, reason: impl Into<String>) -> Self {
        self.status = AnnotatorStatus::Excluded;
        self.exclusion_reason = Some(reason.into());
        self
    }
}

fn validate_iteration(it: &Iteration) -> Result<()> {
    for v in [it.macro_f1, it.macro_accuracy] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidInput(format!("score {v} outside [0, 1]")));
        }
    }
    Ok(())
}

/// Appends an iteration and recomputes the annotator's status.
pub fn update_status(mut ledger: AnnotatorLedger, iteration: Iteration, cfg: &GateConfig) -> Result<AnnotatorLedger> {
    validate_iteration(&iteration)?;
    ledger.iterations.push(iteration);
    match ledger.status {
        AnnotatorStatus::Excluded => {}
        AnnotatorStatus::Training => {
            let passing: Vec<&Iteration> = ledger.iterations.iter().filter(|it| cfg.passes(&it.scores())).collect();
            let modes_ok = !cfg.require_both_proposal_modes
                || (passing.iter().any(|it| it.with_proposals) && passing.iter().any(|it| !it.with_proposals));
            if passing.len() >= cfg.required_passing_iterations && modes_ok {
                ledger.status = AnnotatorStatus::Qualified;
            }
        }
        AnnotatorStatus::Qualified => {
            let recent = &ledger.iterations[ledger.iterations.len().saturating_sub(3)..];
            ledger.review_advised = cfg
                .metrics
                .iter()
                .any(|m| recent.iter().map(|it| it.scores().get(*m)).sum::<f64>() / (recent.len() as f64) < cfg.mu);
        }
    }
    Ok(ledger)
}

/// Drops every record of the given annotators.
pub fn drop_annotators<'a>(
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
    excluded: &BTreeSet<String>,
) -> Vec<AnnotationRecord> {
    records.into_iter().filter(|r| !excluded.contains(&r.annotator_id)).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    /// Index of the iteration in the ledger.
    pub iteration_index: usize,
    pub with_proposals: bool,
    /// Mean F1 of the trailing three iterations minus the first three, in
    /// percentage points. Both windows only count iterations of this mode.
    pub delta_f1_vs_first3: f64,
    pub minutes_delta: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

pub fn learning_curve(ledger: &AnnotatorLedger) -> Vec<LearningPoint> {
    let mut points = Vec::with_capacity(ledger.iterations.len());
    for mode in [false, true] {
        let of_mode: Vec<(usize, &Iteration)> =
            ledger.iterations.iter().enumerate().filter(|(_, it)| it.with_proposals == mode).collect();
        let first = &of_mode[..of_mode.len().min(3)];
        let first_f1 = mean(first.iter().map(|(_, it)| it.macro_f1));
        let first_min = mean(first.iter().map(|(_, it)| it.minutes_spent));
        for (pos, (idx, _)) in of_mode.iter().enumerate() {
            let window = &of_mode[pos.saturating_sub(2)..=pos];
            points.push(LearningPoint {
                iteration_index: *idx,
                with_proposals: mode,
                delta_f1_vs_first3: 100.0 * (mean(window.iter().map(|(_, it)| it.macro_f1)) - first_f1),
                minutes_delta: mean(window.iter().map(|(_, it)| it.minutes_spent)) - first_min,
            });
        }
    }
    points.sort_by_key(|p| p.iteration_index);
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn it(id: usize, with_proposals: bool, f1: f64, acc: f64) -> Iteration {
        Iteration {
            iteration_id: format!("it-{id}"),
            with_proposals,
            macro_f1: f1,
            macro_accuracy: acc,
            minutes_spent: 10.0,
        }
    }

    fn rec(image: &str, class: usize) -> AnnotationRecord {
        AnnotationRecord {
            image_id: image.into(),
            annotator_id: "a".into(),
            chosen_class: class,
            proposal_shown: None,
            timestamp_ms: 0,
            batch_id: "b".into(),
        }
    }

    fn gold() -> BTreeMap<String, usize> {
        [("g0", 0), ("g1", 0), ("g2", 1), ("g3", 1)].into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn scoring_examples() {
        let perfect: Vec<_> = gold().iter().map(|(id, c)| rec(id, *c)).collect();
        let s = score_iteration(&perfect, &gold(), 2).unwrap();
        assert_eq!((s.macro_f1, s.macro_accuracy), (1.0, 1.0));

        let partial = vec![rec("g0", 0), rec("g1", 1), rec("g2", 1), rec("g3", 1)];
        let s = score_iteration(&partial, &gold(), 2).unwrap();
        assert_abs_diff_eq!(s.macro_f1, 0.7333, epsilon = 1e-4);
        assert_abs_diff_eq!(s.macro_accuracy, 0.75);

        assert!(score_iteration(&[], &gold(), 2).is_err());
        assert!(score_iteration(&[rec("nope", 0)], &gold(), 2).is_err());
    }

    #[test]
    fn qualification_needs_both_modes() {
        let cfg = GateConfig::default();
        let l = update_status(AnnotatorLedger::new("a"), it(0, false, 0.7, 0.7), &cfg).unwrap();
        assert_eq!(l.status, AnnotatorStatus::Training);
        let l = update_status(l, it(1, false, 0.7, 0.7), &cfg).unwrap();
        assert_eq!(l.status, AnnotatorStatus::Training);
        let l = update_status(l, it(2, true, 0.7, 0.7), &cfg).unwrap();
        assert_eq!(l.status, AnnotatorStatus::Qualified);
    }

    #[test]
    fn two_passing_iterations_one_per_mode_qualify() {
        let cfg = GateConfig::default();
        let l = update_status(AnnotatorLedger::new("a"), it(0, true, 0.7, 0.7), &cfg).unwrap();
        let l = update_status(l, it(1, false, 0.7, 0.7), &cfg).unwrap();
        assert_eq!(l.status, AnnotatorStatus::Qualified);
    }

    #[test]
    fn below_mu_stays_in_training() {
        let cfg = GateConfig::default();
        let mut l = AnnotatorLedger::new("a");
        for i in 0..6 {
            l = update_status(l, it(i, i % 2 == 0, 0.55, 0.58), &cfg).unwrap();
        }
        assert_eq!(l.status, AnnotatorStatus::Training);
    }

    #[test]
    fn single_metric_gate() {
        let cfg = GateConfig {
            metrics: [GateMetric::MacroAccuracy].into(),
            require_both_proposal_modes: false,
            ..Default::default()
        };
        let l = update_status(AnnotatorLedger::new("a"), it(0, false, 0.3, 0.61), &cfg).unwrap();
        let l = update_status(l, it(1, false, 0.3, 0.9), &cfg).unwrap();
        assert_eq!(l.status, AnnotatorStatus::Qualified);
    }

    #[test]
    fn exclusion_is_terminal_and_drops_records() {
        let cfg = GateConfig::default();
        let l = AnnotatorLedger::new("bad").exclude("below threshold");
        let l = update_status(l, it(0, true, 1.0, 1.0), &cfg).unwrap();
        assert!(l.is_excluded());

        let mut records = vec![rec("x", 0), rec("x", 1)];
        records[1].annotator_id = "bad".into();
        let kept = drop_annotators(&records, &["bad".to_string()].into());
        assert_eq!(kept.len(), 1);
        assert!(kept.iter().all(|r| r.annotator_id != "bad"));
    }

    #[test]
    fn slipping_scores_flag_review() {
        let cfg = GateConfig::default();
        let mut l = AnnotatorLedger::new("a");
        l = update_status(l, it(0, true, 0.8, 0.8), &cfg).unwrap();
        l = update_status(l, it(1, false, 0.8, 0.8), &cfg).unwrap();
        assert!(!l.review_advised);
        l = update_status(l, it(2, false, 0.2, 0.2), &cfg).unwrap();
        l = update_status(l, it(3, false, 0.2, 0.2), &cfg).unwrap();
        assert!(l.review_advised);
        assert_eq!(l.status, AnnotatorStatus::Qualified);
    }

    #[test]
    fn learning_curve_examples() {
        let mut l = AnnotatorLedger::new("a");
        l.iterations = (0..5).map(|i| it(i, false, 0.7, 0.7)).collect();
        assert!(learning_curve(&l).iter().all(|p| p.delta_f1_vs_first3.abs() < 1e-9 && p.minutes_delta.abs() < 1e-9));

        l.iterations = vec![it(0, false, 0.6, 0.6)];
        let c = learning_curve(&l);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].delta_f1_vs_first3, 0.0);

        let f1s = [0.58, 0.60, 0.62, 0.65, 0.6679, 0.6858];
        l.iterations = f1s.iter().enumerate().map(|(i, f)| it(i, false, *f, 0.7)).collect();
        let c = learning_curve(&l);
        // first three average 0.60, last three 0.6679
        assert_abs_diff_eq!(c.last().unwrap().delta_f1_vs_first3, 6.79, epsilon = 1e-9);
    }

    #[test]
    fn learning_curve_splits_modes() {
        let mut l = AnnotatorLedger::new("a");
        l.iterations = vec![
            it(0, false, 0.5, 0.5),
            it(1, true, 0.9, 0.9),
            it(2, false, 0.5, 0.5),
            it(3, false, 0.5, 0.5),
            it(4, false, 0.8, 0.8),
        ];
        let c = learning_curve(&l);
        assert_eq!(c.len(), 5);
        assert_eq!(c[1].delta_f1_vs_first3, 0.0);
        assert!(c[1].with_proposals);
        // plain window (0.5, 0.5, 0.8) against plain first three (0.5, 0.5, 0.5)
        assert_abs_diff_eq!(c[4].delta_f1_vs_first3, 10.0, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn qualification_is_monotone(scores in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, any::<bool>()), 1..20)) {
            let cfg = GateConfig::default();
            let mut l = AnnotatorLedger::new("a");
            let mut qualified = false;
            for (i, (f1, acc, mode)) in scores.into_iter().enumerate() {
                l = update_status(l, it(i, mode, f1, acc), &cfg).unwrap();
                if qualified {
                    prop_assert_eq!(l.status, AnnotatorStatus::Qualified);
                }
                qualified = l.status == AnnotatorStatus::Qualified;
            }
        }

        #[test]
        fn scoring_is_order_free(classes in prop::collection::vec(0usize..2, 4), rot in 0usize..4) {
            let ids = ["g0", "g1", "g2", "g3"];
            let mut recs: Vec<_> = ids.iter().zip(&classes).map(|(id, c)| rec(id, *c)).collect();
            let a = score_iteration(&recs, &gold(), 2).unwrap();
            recs.rotate_left(rot);
            prop_assert_eq!(score_iteration(&recs, &gold(), 2).unwrap(), a);
        }
    }
}
