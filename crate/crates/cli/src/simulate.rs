use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use softlabel_core::postprocess::estimate_delta;
use softlabel_core::simulator::{
    delta_pairs, report_csv, run_campaign, strategy_sweep_seeds, sweep_csv, AnnotatorProfile, Arm, CampaignReport,
    GeneratorParams, SimulationConfig, SweepRow, SyntheticDataset,
};

use crate::error::{CliError, Result};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub sd: f64,
}

impl Spread {
    fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd =
            if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Spread { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub n_images: usize,
    pub per_method_kl: BTreeMap<String, Spread>,
    pub total_annotations: Spread,
    pub consensus_fraction: Spread,
    pub speedup: Spread,
    pub measured_bias: Option<Spread>,
    pub expected_bias: Option<Spread>,
}

pub fn aggregate(reports: &[CampaignReport]) -> Result<Aggregate> {
    let first = reports.first().ok_or_else(|| CliError::Input("no seeds".into()))?;
    let col = |f: &dyn Fn(&CampaignReport) -> f64| Spread::of(&reports.iter().map(f).collect::<Vec<_>>());
    let per_method_kl =
        first.per_method_kl.keys().map(|label| (label.clone(), col(&|r| r.per_method_kl[label]))).collect();
    let biased = first.proposal_bias.is_some();
    Ok(Aggregate {
        seeds: reports.iter().map(|r| r.seed).collect(),
        n_images: first.n_images,
        per_method_kl,
        total_annotations: col(&|r| r.total_annotations as f64),
        consensus_fraction: col(&|r| r.measured_consensus_fraction),
        speedup: col(&|r| r.measured_speedup),
        measured_bias: biased.then(|| col(&|r| r.proposal_bias.map_or(f64::NAN, |b| b.measured))),
        expected_bias: biased.then(|| col(&|r| r.proposal_bias.map_or(f64::NAN, |b| b.expected))),
    })
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Input(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn aggregate_csv(agg: &Aggregate) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "mean_kl", "sd_kl", "seeds"]).map_err(csv_err)?;
    for (label, s) in &agg.per_method_kl {
        w.write_record([label.clone(), s.mean.to_string(), s.sd.to_string(), agg.seeds.len().to_string()])
            .map_err(csv_err)?;
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub delta: f64,
    pub measured_bias: f64,
    pub expected_bias: f64,
    /// Offset recovered from paired with/without-proposal aggregates.
    pub estimated_delta: f64,
}

fn with_delta(profiles: &[AnnotatorProfile], delta: f64) -> Vec<AnnotatorProfile> {
    profiles.iter().cloned().map(|p| AnnotatorProfile { delta, ..p }).collect()
}

/// Bias and recovered offset at each δ, averaged over seeds. Every image
/// gets exactly `annotations` answers per arm.
pub fn delta_sweep(
    params: &GeneratorParams,
    profiles: &[AnnotatorProfile],
    deltas: &[f64],
    annotations: usize,
    seeds: &[u64],
    base: &SimulationConfig,
) -> Result<Vec<DeltaRow>> {
    let datasets =
        seeds.iter().map(|&s| SyntheticDataset::generate(params, s)).collect::<std::result::Result<Vec<_>, _>>()?;
    let mut cfg = SimulationConfig::new(annotations, annotations, vec![Arm::Proposal]);
    cfg.execution = base.execution;
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let profiles = with_delta(profiles, delta);
        let (mut measured, mut expected, mut estimated) = (Vec::new(), Vec::new(), Vec::new());
        for data in &datasets {
            let report = run_campaign(data, &profiles, &cfg, &[])?;
            let bias = report.proposal_bias.expect("proposal arm reports bias");
            measured.push(bias.measured);
            expected.push(bias.expected);
            estimated.push(estimate_delta(&delta_pairs(data, &profiles, annotations, cfg.execution)?)?);
        }
        rows.push(DeltaRow {
            delta,
            measured_bias: Spread::of(&measured).mean,
            expected_bias: Spread::of(&expected).mean,
            estimated_delta: Spread::of(&estimated).mean,
        });
    }
    Ok(rows)
}

pub fn delta_csv(rows: &[DeltaRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["delta", "measured_bias", "expected_bias", "estimated_delta"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.delta.to_string(),
            r.measured_bias.to_string(),
            r.expected_bias.to_string(),
            r.estimated_delta.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// Everything one `simulate` invocation produced.
#[derive(Debug, Default)]
pub struct SimulationOutput {
    pub reports: Vec<CampaignReport>,
    pub aggregate: Option<Aggregate>,
    pub delta_rows: Option<Vec<DeltaRow>>,
    pub sweep_rows: Option<Vec<SweepRow>>,
}

pub fn simulate(scenario: &Scenario, seeds: &[u64]) -> Result<SimulationOutput> {
    if seeds.is_empty() {
        return Err(CliError::Input("--seeds must be at least 1".into()));
    }
    if scenario.simulation.is_none() && scenario.delta_sweep.is_none() && scenario.strategy_sweep.is_none() {
        return Err(CliError::Input(
            "scenario has none of \"simulation\", \"delta_sweep\" or \"strategy_sweep\"".into(),
        ));
    }
    let params = Scenario::require(&scenario.dataset, "dataset")?;
    let profiles = Scenario::require(&scenario.annotators, "annotators")?.profiles();
    let mut out = SimulationOutput::default();
    if let Some(plan) = &scenario.simulation {
        for &seed in seeds {
            let data = SyntheticDataset::generate(params, seed)?;
            out.reports.push(run_campaign(&data, &profiles, &plan.config, &plan.methods)?);
        }
        out.aggregate = Some(aggregate(&out.reports)?);
    }
    if let Some(sweep) = &scenario.delta_sweep {
        let base = scenario
            .simulation
            .as_ref()
            .map(|p| p.config.clone())
            .unwrap_or_else(|| SimulationConfig::new(1, 1, vec![Arm::Proposal]));
        out.delta_rows = Some(delta_sweep(params, &profiles, &sweep.deltas, sweep.annotations, seeds, &base)?);
    }
    if let Some(grid) = &scenario.strategy_sweep {
        out.sweep_rows = Some(strategy_sweep_seeds(params, seeds, &profiles, grid)?);
    }
    Ok(out)
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))
}

fn pretty<T: Serialize>(v: &T) -> String {
    format!("{}\n", serde_json::to_string_pretty(v).expect("report serializes"))
}

/// Writes the output files and returns their names in write order.
pub fn write_outputs(output: &SimulationOutput, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut names = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        write(dir, &name, &body)?;
        names.push(name);
        Ok(())
    };
    for r in &output.reports {
        put(format!("report-seed-{}.json", r.seed), pretty(r))?;
        put(format!("report-seed-{}.csv", r.seed), report_csv(r)?)?;
    }
    if let Some(agg) = &output.aggregate {
        put("aggregate.json".into(), pretty(agg))?;
        put("aggregate.csv".into(), aggregate_csv(agg)?)?;
    }
    if let Some(rows) = &output.delta_rows {
        put("delta_sweep.csv".into(), delta_csv(rows)?)?;
    }
    if let Some(rows) = &output.sweep_rows {
        put("strategy_sweep.csv".into(), sweep_csv(rows)?)?;
    }
    Ok(names)
}

pub fn run(scenario: &Scenario, seeds: &[u64], dir: &Path, out: &mut dyn Write) -> Result<()> {
    let output = simulate(scenario, seeds)?;
    let names = write_outputs(&output, dir)?;
    let stdout = |e| CliError::io("<stdout>", e);
    if let Some(agg) = &output.aggregate {
        writeln!(out, "{} seeds, {} images", agg.seeds.len(), agg.n_images).map_err(stdout)?;
        for (label, s) in &agg.per_method_kl {
            writeln!(out, "  {label:<24} KL {:.4} ± {:.4}", s.mean, s.sd).map_err(stdout)?;
        }
    }
    writeln!(out, "wrote {} file(s) to {}", names.len(), dir.display()).map_err(stdout)?;
    Ok(())
}
