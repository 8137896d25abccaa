//! `dmlshot`: synthetic data, gradient checks, training, cross-validation
//! and the analyses behind the few-shot experiments.
//!
//! Exit codes: 0 on success, 1 when a check fails or a run errors, 2 on
//! invalid usage.

mod commands;
mod dump;
mod train_args;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmlshot_core::eval::TestMethod;
use dmlshot_core::numerics::ProjectionMethod;
use dmlshot_core::Error;

use train_args::TrainArgs;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration (exit 2).
    Usage(String),
    /// A check did not pass (exit 1).
    Check(String),
    /// Anything else that went wrong at run time (exit 1).
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Check(_) | Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Check(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Stratification { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dmlshot",
    version,
    about = "Cross-entropy plus metric-learning objectives for few-shot classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a Gaussian-blob dataset.
    Synth(SynthArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Train one model and optionally evaluate it.
    Train(TrainCmd),
    /// Repeated stratified few-shot evaluation.
    Cv(CvArgs),
    /// Cross-validate every combination of losses, sizes and learning rates.
    Sweep(SweepArgs),
    /// Accuracy by distance to the training centroid.
    AnalyzeDistance(DistanceArgs),
    /// Accuracy of tagged groups against the rest.
    AnalyzeGroups(GroupsArgs),
    /// 2-D coordinates of dumped embeddings.
    Project(ProjectArgs),
    /// Summary table over saved cross-validation results.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 300)]
    per_class: usize,
    /// Distance between class centroids.
    #[arg(long, default_value_t = 4.0)]
    sep: f64,
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
    /// Share of each class drawn with three times the noise.
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// cce, supcon, softtriple, combined-supcon, combined-softtriple or model.
    #[arg(long, value_parser = ["cce", "supcon", "softtriple", "combined-supcon", "combined-softtriple", "model"])]
    loss: String,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    c: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Dataset file (line-delimited JSON).
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated tokens; examples whose text contains one get it as a group tag.
    #[arg(long)]
    tag_tokens: Option<String>,
}

#[derive(Debug, Args)]
struct TrainCmd {
    #[command(flatten)]
    ingest: IngestArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Held-out dataset to evaluate on.
    #[arg(long, conflicts_with = "train_size")]
    test: Option<PathBuf>,
    /// Train on a stratified sample of this size and evaluate on the rest.
    #[arg(long)]
    train_size: Option<usize>,
    /// Seed of the `--train-size` split; matches the first fold of `cv`.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Model parameters as JSON.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Per-step loss records as JSONL.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Metrics as a single JSON line.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-example predictions and embeddings as JSONL.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[command(flatten)]
    ingest: IngestArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    train_size: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Seed of the fold splits.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, env = "DMLSHOT_JOBS", default_value_t = 1)]
    jobs: usize,
    /// Full result as a single JSON line.
    #[arg(long)]
    out: Option<PathBuf>,
    /// One JSONL record per run.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Predictions and embeddings of the first fold.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Earlier result file to test against.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long, default_value_t = TestMethod::MannWhitney)]
    test: TestMethod,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    ingest: IngestArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value = "cce,supcon,softtriple")]
    losses: String,
    #[arg(long, default_value = "20,100,1000")]
    train_sizes: String,
    #[arg(long, default_value = "1e-3,3e-3,1e-2")]
    lrs: String,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, env = "DMLSHOT_JOBS", default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = TestMethod::MannWhitney)]
    test: TestMethod,
    /// One JSONL row per grid point.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DistanceArgs {
    #[arg(long)]
    dump: PathBuf,
    /// Dump whose embeddings define the distances (a baseline model); defaults to `--dump`.
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    buckets: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GroupsArgs {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Re-tag the dumped text with these comma-separated tokens.
    #[arg(long)]
    tag_tokens: Option<String>,
    /// train, test or all.
    #[arg(long, default_value = "test", value_parser = ["train", "test", "all"])]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long, default_value = "pca")]
    method: ProjectionMethod,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "all", value_parser = ["train", "test", "all"])]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Result files written by `cv --out`; the first is the baseline.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    #[arg(long, default_value_t = TestMethod::MannWhitney)]
    test: TestMethod,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Train(a) => commands::train(a),
        Command::Cv(a) => commands::cv(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::AnalyzeDistance(a) => commands::analyze_distance(a),
        Command::AnalyzeGroups(a) => commands::analyze_groups(a),
        Command::Project(a) => commands::project(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
