//! `hybsens` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybsens::config::DATA_ROOT_ENV;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hybsens::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "hybsens", version, about = "Prior-guided underwater image restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build or check a dataset manifest.
    #[command(subcommand)]
    Manifest(ManifestCommand),
    /// Train a model on the training split of a manifest.
    Train(TrainArgs),
    /// Restore one image, or every image of a directory.
    Infer(InferArgs),
    /// Score the test splits of a manifest.
    Eval(EvalArgs),
    /// Write the colour balance prior of an image and report its channel means.
    Prior(PriorArgs),
    /// Report parameter and MAC counts.
    Bench(BenchArgs),
}

#[derive(Subcommand, Debug)]
enum ManifestCommand {
    /// Sample a manifest from the dataset folders.
    Build(BuildArgs),
    /// Check targets, file existence and train/test disjointness.
    Validate {
        manifest: PathBuf,
    },
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Directory holding the datasets.
    #[arg(long, env = DATA_ROOT_ENV)]
    root: PathBuf,
    /// TOML sampling plan; defaults to the standard plan. Relative folders
    /// are resolved against --root.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Multiplies every requested count.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Accept a plan that selects no images.
    #[arg(long)]
    allow_empty: bool,
    #[arg(short, long, default_value = "manifest.jsonl")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Run configuration file (TOML with [model] and [train] tables).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the model switches by a row of the component study
    /// (`backbone`, `+SAT`, ..., `full`).
    #[arg(long)]
    ablation: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for the loss log and checkpoints.
    #[arg(short, long, default_value = "run")]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Start from the small CPU preset instead of the full schedule.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr_init: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    /// Side of the square training crops (also the resize side).
    #[arg(long)]
    crop: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Model to evaluate; without it the raw inputs are scored.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Per-image and mean rows as JSON lines.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PriorArgs {
    input: PathBuf,
    output: PathBuf,
    /// Also write the channel-mean report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    /// One line per row of the component study.
    #[arg(long)]
    study: bool,
    #[arg(long)]
    json: bool,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Manifest(ManifestCommand::Build(a)) => commands::manifest_build(a),
        Command::Manifest(ManifestCommand::Validate { manifest }) => commands::manifest_validate(&manifest),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Prior(a) => commands::prior(a),
        Command::Bench(a) => commands::bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
