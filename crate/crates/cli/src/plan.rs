use std::io::Write;
use std::path::Path;

use serde::Serialize;
use softlabel_core::planner::estimate_workload;
use softlabel_core::planner::{
    near_one_interval, recommend_strategy_with, wald_interval, ConfidenceAnswer, ConfidenceQuery, Interval,
    StrategyRecommendation, Z_95,
};

use crate::error::{CliError, Result};
use crate::scenario::Scenario;

/// Annotation counts shown in the sizing tables.
pub const TABLE_ANNOTATIONS: [u32; 3] = [3, 10, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Table {
    /// Wald interval widths at p = 0.5.
    Wald,
    /// Lower bounds for a class probability near one.
    NearOne,
}

#[derive(Debug, Serialize)]
pub struct WorkloadSummary {
    pub expected_annotations: f64,
    pub arms: u32,
    pub hours: f64,
    pub annotators: u32,
    pub hours_per_annotator: f64,
}

#[derive(Debug, Serialize)]
pub struct ConfidenceRow {
    pub query: ConfidenceQuery,
    pub answer: ConfidenceAnswer,
}

#[derive(Debug, Serialize)]
pub struct PlanReport {
    pub recommendation: Option<StrategyRecommendation>,
    pub summary: Option<String>,
    pub workload: Option<WorkloadSummary>,
    pub confidence: Vec<ConfidenceRow>,
}

fn io(e: std::io::Error) -> CliError {
    CliError::io("<stdout>", e)
}

pub fn build_report(scenario: &Scenario) -> Result<PlanReport> {
    let thresholds = scenario.thresholds.clone().unwrap_or_default();
    let recommendation = scenario.strategy.as_ref().map(|s| recommend_strategy_with(s, &thresholds)).transpose()?;
    let workload = scenario
        .workload
        .as_ref()
        .map(|w| -> Result<WorkloadSummary> {
            let per_arm = estimate_workload(&w.inputs)?;
            let expected = per_arm.expected_annotations * w.arms as f64;
            let hours = per_arm.hours * w.arms as f64;
            Ok(WorkloadSummary {
                expected_annotations: expected,
                arms: w.arms,
                hours,
                annotators: w.annotators,
                hours_per_annotator: hours / w.annotators.max(1) as f64,
            })
        })
        .transpose()?;
    let confidence = scenario
        .confidence
        .iter()
        .map(|q| Ok(ConfidenceRow { query: *q, answer: q.answer()? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(PlanReport { summary: recommendation.as_ref().map(|r| r.summary()), recommendation, workload, confidence })
}

fn interval_row(out: &mut dyn Write, a: u32, i: &Interval) -> Result<()> {
    writeln!(out, "  {a:>4}  {:.4}  {:.4}  {:.4}", i.lower, i.upper, i.width).map_err(io)
}

pub fn print_table(table: Table, out: &mut dyn Write) -> Result<()> {
    match table {
        Table::Wald => writeln!(out, "Wald intervals at p = 0.5, z = {Z_95}"),
        Table::NearOne => writeln!(out, "Intervals for a probability near one"),
    }
    .map_err(io)?;
    writeln!(out, "  {:>4}  {:<6}  {:<6}  {:<6}", "A", "lower", "upper", "width").map_err(io)?;
    for a in TABLE_ANNOTATIONS {
        let i = match table {
            Table::Wald => wald_interval(0.5, a, Z_95)?,
            Table::NearOne => near_one_interval(a)?,
        };
        interval_row(out, a, &i)?;
    }
    Ok(())
}

pub fn print_report(report: &PlanReport, out: &mut dyn Write) -> Result<()> {
    if let (Some(r), Some(summary)) = (&report.recommendation, &report.summary) {
        writeln!(out, "{summary}").map_err(io)?;
        writeln!(out, "platform: {}", serde_json::to_string(&r.platform_hint).unwrap().trim_matches('"'))
            .map_err(io)?;
        for w in &r.warnings {
            writeln!(out, "warning: {w}").map_err(io)?;
        }
        writeln!(out, "rationale:").map_err(io)?;
        for (i, step) in r.rationale_trail.iter().enumerate() {
            writeln!(out, "  {}. {} -> {}: {}", i + 1, step.decision_point, step.branch, step.reason).map_err(io)?;
        }
    }
    if let Some(w) = &report.workload {
        writeln!(
            out,
            "workload: {:.0} annotations over {} arm(s), {:.2} h total, {:.2} h per annotator ({} annotators)",
            w.expected_annotations, w.arms, w.hours, w.hours_per_annotator, w.annotators
        )
        .map_err(io)?;
    }
    if !report.confidence.is_empty() {
        writeln!(out, "confidence:").map_err(io)?;
        for row in &report.confidence {
            let q = &row.query;
            match row.answer {
                ConfidenceAnswer::Interval(i) => writeln!(
                    out,
                    "  p = {} with {} annotations: [{:.4}, {:.4}], width {:.4}",
                    q.p,
                    q.n_annotations.unwrap_or_default(),
                    i.lower,
                    i.upper,
                    i.width
                ),
                ConfidenceAnswer::Annotations { annotations } => writeln!(
                    out,
                    "  p = {} within width {}: {annotations} annotations",
                    q.p,
                    q.width.unwrap_or_default()
                ),
            }
            .map_err(io)?;
        }
    }
    Ok(())
}

/// Prints the plan and writes `recommendation.json` into `out_dir`.
pub fn run(scenario: Option<&Scenario>, tables: &[Table], out_dir: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    if scenario.is_none() && tables.is_empty() {
        return Err(CliError::Input("nothing to plan: pass a scenario or --table".into()));
    }
    if let Some(scenario) = scenario {
        if scenario.strategy.is_none() && scenario.workload.is_none() && scenario.confidence.is_empty() {
            return Err(CliError::Input("scenario has none of \"strategy\", \"workload\" or \"confidence\"".into()));
        }
        let report = build_report(scenario)?;
        print_report(&report, out)?;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            let path = dir.join("recommendation.json");
            let json = serde_json::to_string_pretty(&report).expect("plan serializes");
            std::fs::write(&path, format!("{json}\n")).map_err(|e| CliError::io(&path, e))?;
        }
    }
    for t in tables {
        print_table(*t, out)?;
    }
    Ok(())
}
