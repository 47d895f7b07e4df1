//! Command-line front end: run configured experiments, build comparison
//! tables and PR plots from their artifacts, manage caches, fetch corpora.

mod artifacts;
mod misc;
mod results;
mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use artifacts::{StoredSummary, FOLDS_FILE, PREDICTIONS_FILE, PROMPTS_FILE, SUMMARY_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "llmclf",
    version,
    about = "LLM zero/few-shot text classification experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every experiment in a config file.
    Run(RunArgs),
    /// Write macro-averaged comparison tables from a results directory.
    Report(ReportArgs),
    /// Draw micro-averaged PR curves from a results directory.
    Plot(PlotArgs),
    /// Inspect or compact a response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Download abstracts for a list of article ids.
    Fetch(FetchArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Concurrent requests per run, overriding each backend's setting.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Base URL used for every backend.
    #[arg(long)]
    pub backend_url: Option<String>,
    /// Render and record prompts without calling any backend.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupingArg {
    ByDataset,
    ByConfig,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results directory written by `run`.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long, value_enum, default_value = "by-dataset")]
    pub grouping: GroupingArg,
    /// One metric; all metrics when omitted.
    #[arg(long)]
    pub metric: Option<String>,
    /// Directory for the tables; defaults to the results directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Directory for the figures; defaults to the results directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    /// Print entry counts and size.
    Stat {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Rewrite the cache keeping one valid record per key.
    Gc {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// CSV with `id` and `label` columns.
    #[arg(long)]
    pub ids: PathBuf,
    /// JSONL dataset to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = misc::EFETCH_URL)]
    pub endpoint: String,
    #[arg(long, default_value_t = 4)]
    pub parallel: usize,
}

/// Failure classes, each with a stable code and exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Config,
    Input,
    NoResults,
    NoProbabilisticRuns,
    Backend,
    Io,
    Locked,
}

impl ErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Config => "config",
            ErrorKind::Input => "input",
            ErrorKind::NoResults => "no-results",
            ErrorKind::NoProbabilisticRuns => "no-probabilistic-runs",
            ErrorKind::Backend => "backend",
            ErrorKind::Io => "io",
            ErrorKind::Locked => "locked",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage
            | ErrorKind::Config
            | ErrorKind::Input
            | ErrorKind::NoResults
            | ErrorKind::NoProbabilisticRuns => 1,
            ErrorKind::Backend => 2,
            ErrorKind::Io | ErrorKind::Locked => 3,
        }
    }
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    /// `error[code]: message`
    pub fn render(&self) -> String {
        format!("error[{}]: {}", self.kind.code(), self.message)
    }
}

pub(crate) fn io_error(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::new(ErrorKind::Io, format!("{}: {e}", path.display()))
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(a) => run::cmd_run(&a),
        Command::Report(a) => results::cmd_report(&a),
        Command::Plot(a) => results::cmd_plot(&a),
        Command::Cache { action } => misc::cmd_cache(&action),
        Command::Fetch(a) => misc::cmd_fetch(&a),
    }
}
