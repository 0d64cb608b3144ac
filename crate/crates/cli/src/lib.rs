//! The `tunescale` pipeline: ingest, sample, score, fit, features, plan and
//! report, each a subcommand writing comma-delimited tables or JSON lines
//! into `--out` plus a `manifest_<command>.json` with the resolved config.
//!
//! Every flag can also come from a `key = value` file given with
//! `--config`; keys are flag names without the leading dashes, and flags
//! on the command line win.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod config;

pub use config::merge_config;

/// Environment variable holding the bearer token for remote providers.
pub const TOKEN_ENV: &str = "TUNESCALE_API_TOKEN";

#[derive(Debug, Parser, Serialize)]
#[command(name = "tunescale", version, about = "Ability-level instruction tuning analysis")]
pub struct Cli {
    /// Key-value file mirroring the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Fail on malformed input lines instead of skipping them.
    #[arg(long, global = true)]
    pub strict: bool,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Validate and deduplicate a corpus.
    Ingest(IngestArgs),
    /// Draw per-ability training samples along the volume schedule.
    Sample(SampleArgs),
    /// Score one checkpoint on a split and append run-log rows.
    Score(ScoreArgs),
    /// Fit scaling sensitivities from run logs.
    Fit(FitArgs),
    /// Compute Complexity and Transference.
    Features(FeaturesArgs),
    /// Emit a data-mix plan.
    Plan(PlanArgs),
    /// Curves and strategy comparison tables.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Sample(_) => "sample",
            Command::Score(_) => "score",
            Command::Fit(_) => "fit",
            Command::Features(_) => "features",
            Command::Plan(_) => "plan",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Fraction,
    Percent,
}

impl From<Unit> for tunescale_core::eval::AccuracyUnit {
    fn from(u: Unit) -> Self {
        match u {
            Unit::Fraction => Self::Fraction,
            Unit::Percent => Self::Percent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Fixture,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyArg {
    Baseline,
    Reconstruct,
    Maximum,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Largest per-ability volume; the schedule is 1, 4, 16, ... then this.
    #[arg(long)]
    pub max_n: Option<u64>,
    /// Explicit volumes instead of the schedule.
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<u64>,
    /// Restrict to these abilities.
    #[arg(long, value_delimiter = ',')]
    pub abilities: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = ProviderKind::Fixture)]
    pub provider: ProviderKind,
    /// Fixture file of recorded log-probabilities and generations.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Base URL of a scoring server.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub max_in_flight: usize,
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    pub split: EvalSplit,
    #[arg(long, value_delimiter = ',')]
    pub abilities: Vec<String>,
    /// Parameter count N of the scored checkpoint.
    #[arg(long)]
    pub model_size: u64,
    /// Per-ability training volume D of the scored checkpoint.
    #[arg(long)]
    pub data_volume: u64,
    #[arg(long)]
    pub epoch: u32,
    /// Per-token perplexity instead of the summed form.
    #[arg(long)]
    pub length_normalize: bool,
    #[arg(long, value_enum, default_value_t = Unit::Fraction)]
    pub unit: Unit,
    /// Ability the checkpoint was trained on (or `foundation`); writes
    /// transfer.csv for matrix assembly.
    #[arg(long)]
    pub trained_on: Option<String>,
    /// Fetch gold log-probabilities for every instance and write loss.csv.
    #[arg(long)]
    pub with_loss: bool,
    #[arg(long, default_value_t = 512)]
    pub max_tokens: u32,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub runlog: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Unit::Fraction)]
    pub unit: Unit,
    /// Only epochs after this one are eligible for checkpoint selection.
    #[arg(long, default_value_t = tunescale_core::eval::SELECTION_AFTER_EPOCH)]
    pub after_epoch: u32,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturesArgs {
    /// Accuracy matrix JSON.
    #[arg(long, conflicts_with = "transfer")]
    pub matrix: Option<PathBuf>,
    /// Transfer tables (trained_on,evaluated,accuracy) to assemble a matrix.
    #[arg(long, value_delimiter = ',')]
    pub transfer: Vec<PathBuf>,
    /// Loss tables (ability,loss) used with --transfer.
    #[arg(long, value_delimiter = ',')]
    pub loss: Vec<PathBuf>,
    /// Fits table; adds the relation block.
    #[arg(long)]
    pub fits: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Unit::Fraction)]
    pub unit: Unit,
    #[arg(long)]
    pub w1: Option<f64>,
    #[arg(long)]
    pub w2: Option<f64>,
    #[arg(long)]
    pub w: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    /// Baseline abilities; defaults to the availability keys, then the
    /// default catalog.
    #[arg(long, value_delimiter = ',')]
    pub abilities: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    pub per_ability: u64,
    /// Key-value file `ability = count`.
    #[arg(long)]
    pub availability: Option<PathBuf>,
    /// Key-value file `ability = count` applied on top of availability.
    #[arg(long)]
    pub overrides: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub budget: u64,
    /// Key-value file `ability = resistant|saturated|responsive`, with an
    /// optional `:count` suffix.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Fits table used to classify abilities when --classes is absent.
    #[arg(long)]
    pub fits: Option<PathBuf>,
    /// Run logs used for plateau detection.
    #[arg(long, value_delimiter = ',')]
    pub runlog: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Unit::Fraction)]
    pub unit: Unit,
    #[arg(long, default_value_t = tunescale_core::eval::SELECTION_AFTER_EPOCH)]
    pub after_epoch: u32,
    #[arg(long, default_value_t = tunescale_core::planner::DEFAULT_FLOOR)]
    pub floor: u64,
    #[arg(long, default_value_t = tunescale_core::planner::DEFAULT_SATURATED_CAP)]
    pub saturated_cap: u64,
    #[arg(long, default_value_t = tunescale_core::planner::DEFAULT_RESISTANT_THRESHOLD)]
    pub resistant_threshold: f64,
    #[arg(long, default_value_t = tunescale_core::planner::DEFAULT_PLATEAU_EPSILON)]
    pub plateau_epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub synthetic: u64,
    #[arg(long, default_value_t = tunescale_core::planner::DEFAULT_SYNTHETIC_WARN_RATIO)]
    pub synthetic_warn_ratio: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Run logs for accuracy-vs-volume curves.
    #[arg(long, value_delimiter = ',')]
    pub runlog: Vec<PathBuf>,
    /// Score table (group,column,strategy,role,score,published_flag).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Unit::Fraction)]
    pub unit: Unit,
    #[arg(long, default_value_t = tunescale_core::eval::SELECTION_AFTER_EPOCH)]
    pub after_epoch: u32,
}

/// Failure classes mapped to process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Validation = 1,
    IoOrProvider = 2,
}

pub fn exit_kind(err: &anyhow::Error) -> ExitKind {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tunescale_core::Error>() {
            return if e.is_io_or_provider() {
                ExitKind::IoOrProvider
            } else {
                ExitKind::Validation
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ExitKind::IoOrProvider;
        }
    }
    ExitKind::Validation
}

/// Parses arguments (merging any `--config` file) and runs the command.
/// Returns the list of files written, manifest last.
pub fn run<I, S>(argv: I) -> anyhow::Result<Vec<PathBuf>>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let merged = merge_config(argv)?;
    let cli = Cli::try_parse_from(merged)?;
    execute(&cli)
}

pub fn execute(cli: &Cli) -> anyhow::Result<Vec<PathBuf>> {
    commands::dispatch(cli)
}
