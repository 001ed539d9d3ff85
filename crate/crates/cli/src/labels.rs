//! Offline post-processing, store export and gate reports.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;
use softlabel_core::export::{export_rows, parse_log, render, ExportFilter, ExportFormat};
use softlabel_core::gatekeeper::{learning_curve, AnnotatorLedger, AnnotatorStatus};
use softlabel_core::{Method, PostprocessParams};
use softlabel_service::model::parse_manifest;
use softlabel_service::{Campaign, CampaignConfig, SubsetTag};

use crate::error::{CliError, Result};

/// Label-space settings for an offline run: either a full campaign config
/// or just the class count and post-processing parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum LabelConfig {
    Campaign(Box<CampaignConfig>),
    Bare(BareConfig),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BareConfig {
    pub k: usize,
    #[serde(default)]
    pub postprocess: PostprocessParams,
}

impl LabelConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        // untagged errors are vague; report the campaign form's complaint when it looks like one
        serde_json::from_str(text).map_err(|_| {
            let why = match serde_json::from_str::<serde_json::Value>(text) {
                Err(e) => e.to_string(),
                Ok(v) if v.get("campaign_id").is_some() => {
                    serde_json::from_value::<CampaignConfig>(v).err().map_or_else(String::new, |e| e.to_string())
                }
                Ok(v) => serde_json::from_value::<BareConfig>(v).err().map_or_else(String::new, |e| e.to_string()),
            };
            CliError::Input(format!("{origin}: {why}"))
        })
    }

    pub fn k(&self) -> usize {
        match self {
            LabelConfig::Campaign(c) => c.k,
            LabelConfig::Bare(b) => b.k,
        }
    }

    pub fn params(&self) -> &PostprocessParams {
        match self {
            LabelConfig::Campaign(c) => &c.postprocess,
            LabelConfig::Bare(b) => &b.postprocess,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            LabelConfig::Campaign(c) => Ok(c.validate()?),
            LabelConfig::Bare(b) => {
                if b.k < 2 {
                    return Err(CliError::Input(format!("k must be at least 2, got {}", b.k)));
                }
                Ok(b.postprocess.validate(b.k)?)
            }
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub struct PostprocessArgs<'a> {
    pub log: &'a Path,
    pub config: &'a Path,
    pub method: Method,
    pub manifest: Option<&'a Path>,
    pub exclude: &'a [String],
    pub format: ExportFormat,
}

/// Post-processes a raw annotation log exactly as a campaign export would.
pub fn postprocess(args: &PostprocessArgs) -> Result<String> {
    let cfg = LabelConfig::parse(&read(args.config)?, &args.config.display().to_string())?;
    cfg.validate()?;
    if let LabelConfig::Campaign(c) = &cfg {
        if args.method.requires_proposals() && !c.use_proposals {
            return Err(CliError::Input(format!(
                "{} needs proposals but campaign {} does not use them",
                args.method, c.campaign_id
            )));
        }
    }
    let records = parse_log(&read(args.log)?)
        .map_err(|(line, msg)| CliError::Input(format!("{}: line {line}: {msg}", args.log.display())))?;
    if args.method.requires_proposals() {
        if let Some((i, _)) = records.iter().enumerate().find(|(_, r)| r.proposal_shown.is_none()) {
            return Err(CliError::Input(format!(
                "{}: line {}: {} needs proposals but the record has none",
                args.log.display(),
                i + 1,
                args.method
            )));
        }
    }
    let images = match args.manifest {
        Some(path) => {
            let entries = parse_manifest(&read(path)?, cfg.k())
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            Some(
                entries
                    .into_iter()
                    .filter(|e| e.subset_tag == SubsetTag::Annotate)
                    .map(|e| e.image_id)
                    .collect::<BTreeSet<_>>(),
            )
        }
        None => None,
    };
    let filter = ExportFilter { images, excluded_annotators: args.exclude.iter().cloned().collect() };
    let rows = export_rows(&records, cfg.k(), cfg.params(), args.method, &filter)?;
    Ok(render(&rows, cfg.k(), args.format)?)
}

/// Replays a stored campaign and exports it.
pub fn export(store_dir: &Path, campaign: &str, method: Method, format: ExportFormat) -> Result<String> {
    let dir = store_dir.join(campaign);
    if !dir.is_dir() {
        return Err(CliError::Input(format!("no campaign {campaign:?} under {}", store_dir.display())));
    }
    Ok(Campaign::open(dir)?.export(method, format)?)
}

pub enum LedgerSource<'a> {
    Store { store_dir: &'a Path, campaign: &'a str },
    Files(&'a [std::path::PathBuf]),
}

pub fn load_ledgers(source: &LedgerSource) -> Result<Vec<AnnotatorLedger>> {
    match source {
        LedgerSource::Store { store_dir, campaign } => {
            let dir = store_dir.join(campaign);
            if !dir.is_dir() {
                return Err(CliError::Input(format!("no campaign {campaign:?} under {}", store_dir.display())));
            }
            Ok(Campaign::open(dir)?.annotators())
        }
        LedgerSource::Files(paths) => paths
            .iter()
            .map(|p| serde_json::from_str(&read(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))))
            .collect(),
    }
}

fn status_name(s: AnnotatorStatus) -> &'static str {
    match s {
        AnnotatorStatus::Training => "TRAINING",
        AnnotatorStatus::Qualified => "QUALIFIED",
        AnnotatorStatus::Excluded => "EXCLUDED",
    }
}

/// Prints one status row per annotator, and the learning curve if asked.
pub fn gate_report(ledgers: &[AnnotatorLedger], curve: bool, out: &mut dyn Write) -> Result<()> {
    let io = |e| CliError::io("<stdout>", e);
    writeln!(
        out,
        "{:<20} {:<10} {:>10} {:>8} {:>8}  review",
        "annotator", "status", "iterations", "last_f1", "last_acc"
    )
    .map_err(io)?;
    for l in ledgers {
        let (f1, acc) = l.iterations.last().map_or(("-".to_string(), "-".to_string()), |it| {
            (format!("{:.3}", it.macro_f1), format!("{:.3}", it.macro_accuracy))
        });
        writeln!(
            out,
            "{:<20} {:<10} {:>10} {:>8} {:>8}  {}",
            l.annotator_id,
            status_name(l.status),
            l.iterations.len(),
            f1,
            acc,
            if l.review_advised { "advised" } else { "-" }
        )
        .map_err(io)?;
    }
    if curve {
        for l in ledgers {
            writeln!(out, "\n{} learning curve", l.annotator_id).map_err(io)?;
            writeln!(out, "  {:>4} {:<9} {:>10} {:>10}", "iter", "proposals", "dF1 (pp)", "dminutes").map_err(io)?;
            for p in learning_curve(l) {
                writeln!(
                    out,
                    "  {:>4} {:<9} {:>10.2} {:>10.2}",
                    p.iteration_index,
                    if p.with_proposals { "yes" } else { "no" },
                    p.delta_f1_vs_first3,
                    p.minutes_delta
                )
                .map_err(io)?;
            }
        }
    }
    Ok(())
}
