//! `personkg`: corpus cleaning, dataset building, extraction, evaluation,
//! weight sensitivity analysis and graph export.

mod commands;
mod config;
mod files;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "personkg",
    version,
    about = "Person knowledge-graph extraction pipeline"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write outputs here instead of a run-stamped directory under `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, deduplicate, group and segment source documents.
    Clean(CleanArgs),
    /// Build an Alpaca-format instruction dataset from gold annotations.
    BuildDataset(BuildDatasetArgs),
    /// Run extraction over test records with the configured chat backend.
    Extract(ExtractArgs),
    /// Score predictions against gold annotations.
    Evaluate(EvaluateArgs),
    /// Variance of weighted run scores across checkpoints, per weight scheme.
    AnalyzeWeights(AnalyzeArgs),
    /// Export records as a property graph (Cypher and JSONL).
    ExportGraph(ExportArgs),
    /// List available prompt templates.
    Templates,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Args)]
pub struct CleanArgs {
    /// TOML manifest of `[[doc]]` entries.
    #[arg(long, conflicts_with = "input_dir")]
    pub manifest: Option<PathBuf>,
    /// Directory laid out as `<person>/<source_kind>/*.txt`.
    #[arg(long)]
    pub input_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct BuildDatasetArgs {
    /// Output of `clean`; supplies texts for gold lines without one.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub golds: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Put the character text in `input` instead of inside the instruction.
    #[arg(long)]
    pub split_input: bool,
    #[arg(long)]
    pub template: Option<String>,
}

#[derive(Args)]
pub struct ExtractArgs {
    /// JSONL of `{record_id, text}` (gold lines work too).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Supplies texts for test lines without one.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Use canned `{record_id, response}` lines instead of the configured backend.
    #[arg(long, conflicts_with = "fixed")]
    pub replay: Option<PathBuf>,
    /// Use this response for every record.
    #[arg(long)]
    pub fixed: Option<String>,
    #[arg(long)]
    pub template: Option<String>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub golds: Option<PathBuf>,
    /// Weight scheme name, e.g. `average-distribution`, `random1`.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Weight table CSV.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Score matrix CSV: `Weighting Method,<checkpoint>...[,Variance]`.
    #[arg(long, group = "source")]
    pub matrix: Option<PathBuf>,
    /// Directory of evaluation reports, one per checkpoint.
    #[arg(long, group = "source")]
    pub reports: Option<PathBuf>,
    /// Use the bundled reference score matrix.
    #[arg(long, group = "source")]
    pub reference: bool,
    /// `population` or `sample`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExportArgs {
    /// Prediction, gold or bare-record JSONL.
    #[arg(long)]
    pub records: PathBuf,
    /// Also send the statements to the configured graph database.
    #[arg(long)]
    pub push: bool,
}

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| usage(format!("config: {e:#}")))?,
        None => RunConfig::default(),
    };
    let out = cli.out.as_deref();
    match cli.command {
        Command::Clean(a) => commands::clean(&cfg, out, a),
        Command::BuildDataset(a) => commands::build_dataset(&cfg, out, a),
        Command::Extract(a) => commands::extract(&cfg, out, a),
        Command::Evaluate(a) => commands::evaluate(&cfg, out, a),
        Command::AnalyzeWeights(a) => commands::analyze_weights(&cfg, out, a),
        Command::ExportGraph(a) => commands::export_graph(&cfg, out, a),
        Command::Templates => commands::templates(&cfg),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
