//! Equal-cost comparison of annotating with and without proposals.
//!
//! A proposal annotation costs `1 / S` of a plain one, so a budget worth
//! `B` plain annotations buys `floor(B · S)` proposal annotations.

use serde::{Deserialize, Serialize};

use super::{
    run_campaign, AnnotatorProfile, Arm, ConfusionSource, Execution, GeneratorParams, MethodSpec, SimulationConfig,
    SyntheticDataset,
};
use crate::error::{Error, Result};
use crate::postprocess::Method;

/// Cost of `annotations` in units of plain annotations.
pub fn annotation_cost(annotations: usize, use_proposals: bool, speedup: f64) -> f64 {
    if use_proposals {
        annotations as f64 / speedup
    } else {
        annotations as f64
    }
}

/// Proposal annotations affordable for the cost of `budget` plain ones.
pub fn proposal_annotations_at_cost(budget: usize, speedup: f64) -> usize {
    ((budget as f64 * speedup) + 1e-9).floor().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    /// Budgets in plain-annotation units; each is one grid point.
    pub budgets: Vec<usize>,
    pub speedup: f64,
    pub plain_methods: Vec<Method>,
    pub proposal_methods: Vec<Method>,
    #[serde(default)]
    pub assumed_delta: Option<f64>,
    #[serde(default)]
    pub confusion: ConfusionSource,
    #[serde(default)]
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: usize,
    pub use_proposals: bool,
    pub annotations: usize,
    pub cost: f64,
    pub method: Method,
    pub mean_kl: f64,
}

/// Runs every grid point with a fixed annotation count per image (no early
/// stopping) and reports the mean KL of each method.
pub fn strategy_sweep(
    data: &SyntheticDataset,
    profiles: &[AnnotatorProfile],
    grid: &SweepGrid,
) -> Result<Vec<SweepRow>> {
    if grid.budgets.is_empty() {
        return Err(Error::InvalidInput("empty sweep grid".into()));
    }
    if grid.speedup.is_nan() || grid.speedup <= 0.0 {
        return Err(Error::InvalidInput("speedup must be positive".into()));
    }
    let mut rows = Vec::new();
    for &budget in &grid.budgets {
        if budget == 0 {
            return Err(Error::InvalidInput("budgets must be positive".into()));
        }
        let arms = [
            (Arm::Plain, budget, &grid.plain_methods),
            (Arm::Proposal, proposal_annotations_at_cost(budget, grid.speedup), &grid.proposal_methods),
        ];
        for (arm, annotations, methods) in arms {
            if methods.is_empty() {
                continue;
            }
            let mut cfg = SimulationConfig::new(annotations, annotations, vec![arm]);
            cfg.assumed_delta = grid.assumed_delta;
            cfg.confusion = grid.confusion.clone();
            cfg.execution = grid.execution;
            let specs: Vec<MethodSpec> = methods.iter().map(|&m| MethodSpec::new(arm, m)).collect();
            let report = run_campaign(data, profiles, &cfg, &specs)?;
            for spec in specs {
                rows.push(SweepRow {
                    budget,
                    use_proposals: arm == Arm::Proposal,
                    annotations,
                    cost: annotation_cost(annotations, arm == Arm::Proposal, grid.speedup),
                    method: spec.method,
                    mean_kl: report.per_method_kl[&spec.label()],
                });
            }
        }
    }
    Ok(rows)
}

/// Sweep averaged over datasets generated from `params` at each seed.
pub fn strategy_sweep_seeds(
    params: &GeneratorParams,
    seeds: &[u64],
    profiles: &[AnnotatorProfile],
    grid: &SweepGrid,
) -> Result<Vec<SweepRow>> {
    let mut mean: Option<Vec<SweepRow>> = None;
    for &seed in seeds {
        let data = SyntheticDataset::generate(params, seed)?;
        let rows = strategy_sweep(&data, profiles, grid)?;
        match &mut mean {
            None => mean = Some(rows),
            Some(acc) => {
                for (a, r) in acc.iter_mut().zip(rows) {
                    a.mean_kl += r.mean_kl;
                }
            }
        }
    }
    let mut rows = mean.ok_or_else(|| Error::InvalidInput("no seeds".into()))?;
    for r in &mut rows {
        r.mean_kl /= seeds.len() as f64;
    }
    Ok(rows)
}

/// Plot-ready CSV of sweep rows.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record(["budget", "use_proposals", "annotations", "cost", "method", "mean_kl"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.budget.to_string(),
            r.use_proposals.to_string(),
            r.annotations.to_string(),
            r.cost.to_string(),
            r.method.to_string(),
            r.mean_kl.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
