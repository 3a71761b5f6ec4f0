use std::path::PathBuf;
use std::process::ExitCode;

use alcode::acquisition::Method;
use alcode::distance::Metric;
use alcode::features::FeatureKind;
use alcode::Error;
use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod experiment;
mod plot;

#[derive(Parser, Debug)]
#[command(
    name = "alcode",
    version,
    about = "Pool-based active learning for code tasks"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one acquisition function over a pool and write the selection.
    Select(SelectArgs),
    /// Simulate active learning for every configured method and seed.
    Simulate { config: PathBuf },
    /// Correlate selection diversity with model performance.
    Study { config: PathBuf },
    /// Compute a pairwise distance matrix.
    Pairwise(PairwiseArgs),
    /// Generate a synthetic pool file.
    Synth(SynthArgs),
}

#[derive(Parser, Debug)]
pub struct SelectArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long, value_parser = parse_feature)]
    pub feature: Option<FeatureKind>,
    /// Class count; inferred from the labels when absent.
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON list of already labeled pool ids.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Probability (or output) matrix from an external model.
    #[arg(long)]
    pub proba: Option<PathBuf>,
    /// Embedding matrix from an external model.
    #[arg(long)]
    pub embed: Option<PathBuf>,
    /// JSON list of pool ids, one per matrix row. Defaults to pool order.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    #[arg(long, value_parser = parse_metric, default_value = "euclidean")]
    pub distance: Metric,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Output directory for selection.json and scores.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Parser, Debug)]
pub struct PairwiseArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, value_parser = parse_metric)]
    pub metric: Metric,
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Feature matrix (CSV or ALFV) with one row per pool item.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub table_width: usize,
    #[arg(long, default_value_t = 0)]
    pub table_seed: u64,
    /// ALFV output path; the sidecar goes next to it with a .json extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SynthKind {
    Classification,
    Sequence,
}

#[derive(Parser, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    /// Overrides the seed in --params.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file overriding generator parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_feature(s: &str) -> Result<FeatureKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::InvalidInput(_) | Error::Config(_) | Error::Json(_) => 2,
        Error::Capability(_) => 3,
        Error::Io(_) => 4,
        Error::Numerical(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Select(args) => commands::select(&args),
        Command::Simulate { config } => commands::simulate(&config),
        Command::Study { config } => commands::study(&config),
        Command::Pairwise(args) => commands::pairwise(&args),
        Command::Synth(args) => commands::synth(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
