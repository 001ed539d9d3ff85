//! `softlabel` command line: planning, simulation, offline post-processing,
//! gate reports and the campaign server.

pub mod error;
pub mod labels;
pub mod plan;
pub mod scenario;
pub mod simulate;

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use softlabel_core::export::ExportFormat;
use softlabel_core::Method;
use softlabel_service::http::{serve, Service, SystemClock};

pub use error::{CliError, Result};
use scenario::Scenario;

#[derive(Debug, Parser)]
#[command(name = "softlabel", version, about = "Plan, simulate and run soft-label annotation campaigns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recommend an annotation strategy and size the campaign.
    Plan {
        /// Scenario JSON with "strategy", "workload" and/or "confidence".
        scenario: Option<PathBuf>,
        /// Also print an interval table for 3, 10 and 50 annotations.
        #[arg(long, value_enum)]
        table: Vec<plan::Table>,
        /// Directory for recommendation.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run seeded simulated campaigns and sweeps.
    Simulate {
        scenario: PathBuf,
        /// Number of seeds, starting at --first-seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Show annotator qualification status.
    Gate {
        #[command(flatten)]
        source: GateSource,
        /// Also print each annotator's learning curve.
        #[arg(long)]
        curve: bool,
    },
    /// Post-process a raw annotation log offline.
    Postprocess {
        /// JSONL annotation log.
        #[arg(long)]
        log: PathBuf,
        /// Campaign config, or {"k": .., "postprocess": {..}}.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "RAW")]
        method: Method,
        /// Restrict to the manifest's ANNOTATE images.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Drop every record of this annotator; repeatable.
        #[arg(long)]
        exclude: Vec<String>,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
    },
    /// Export soft labels from a campaign store.
    Export {
        #[arg(long)]
        store_dir: PathBuf,
        #[arg(long)]
        campaign: String,
        #[arg(long, default_value = "RAW")]
        method: Method,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
    },
    /// Serve the campaign HTTP API.
    Serve {
        #[arg(long)]
        store_dir: PathBuf,
        #[arg(long, env = "LISTEN_ADDR", default_value = "127.0.0.1:8080")]
        listen: String,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = true)]
pub struct GateSource {
    #[arg(long, requires = "campaign", conflicts_with = "ledger")]
    pub store_dir: Option<PathBuf>,
    #[arg(long, requires = "store_dir")]
    pub campaign: Option<String>,
    /// Ledger JSON files; repeatable.
    #[arg(long)]
    pub ledger: Vec<PathBuf>,
}

fn emit(out: &mut dyn Write, body: &str) -> Result<()> {
    out.write_all(body.as_bytes()).map_err(|e| CliError::io("<stdout>", e))
}

/// Runs one command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Plan { scenario, table, out: dir } => {
            let scenario = scenario.as_deref().map(Scenario::load).transpose()?;
            plan::run(scenario.as_ref(), &table, dir.as_deref(), out)
        }
        Command::Simulate { scenario, seeds, first_seed, out: dir } => {
            let scenario = Scenario::load(&scenario)?;
            let seeds: Vec<u64> = (first_seed..first_seed.saturating_add(seeds)).collect();
            simulate::run(&scenario, &seeds, &dir, out)
        }
        Command::Gate { source, curve } => {
            let source = match (&source.store_dir, &source.campaign) {
                (Some(store_dir), Some(campaign)) => labels::LedgerSource::Store { store_dir, campaign },
                _ => labels::LedgerSource::Files(&source.ledger),
            };
            labels::gate_report(&labels::load_ledgers(&source)?, curve, out)
        }
        Command::Postprocess { log, config, method, manifest, exclude, format } => {
            let body = labels::postprocess(&labels::PostprocessArgs {
                log: &log,
                config: &config,
                method,
                manifest: manifest.as_deref(),
                exclude: &exclude,
                format,
            })?;
            emit(out, &body)
        }
        Command::Export { store_dir, campaign, method, format } => {
            emit(out, &labels::export(&store_dir, &campaign, method, format)?)
        }
        Command::Serve { store_dir, listen } => {
            std::fs::create_dir_all(&store_dir).map_err(|e| CliError::io(&store_dir, e))?;
            let service = Arc::new(Service::open(&store_dir, SystemClock)?);
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io("<runtime>", e))?;
            writeln!(out, "listening on {listen}").map_err(|e| CliError::io("<stdout>", e))?;
            out.flush().map_err(|e| CliError::io("<stdout>", e))?;
            runtime.block_on(serve(service, &listen)).map_err(|e| CliError::io(&listen, e))
        }
    }
}
