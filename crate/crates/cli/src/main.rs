//! Command-line surface: data ingestion, experiment configuration,
//! training, prediction, inspection, and synthetic-data generation.
//!
//! Every failure exits nonzero after printing a one-line JSON record
//! `{"error": ..., "exit_code": ...}` to stderr. Code 2 marks configuration
//! and parse errors, 3 data errors, 4 degenerate training inputs, and 1
//! anything else.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Train and apply SVM classifiers whose kernel is a structured combination
/// of basis kernels.
#[derive(Parser)]
#[command(name = "spnmkl", version, about)]
struct Cli {
    /// Log verbosity: error, warn, info, debug, or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from an experiment configuration.
    Train(TrainArgs),
    /// Classify a data file with a trained model.
    Predict(PredictArgs),
    /// Report the weights, paths, penalties, and diagnostics of a model or
    /// of a raw structure document.
    Inspect(InspectArgs),
    /// Write a synthetic benchmark dataset.
    GenSynth(GenSynthArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Experiment configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Model output path; overrides `model_out` from the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cap on the number of expanded paths.
    #[arg(long)]
    pub max_paths: Option<usize>,
    /// Seed recorded in the training configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Data file to classify.
    #[arg(long)]
    pub data: PathBuf,
    /// Data layout: csv or sparse; inferred from the extension when absent.
    #[arg(long)]
    pub format: Option<String>,
    /// Predictions output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Treat every column as a feature: no label column, no accuracy line.
    #[arg(long)]
    pub unlabeled: bool,
}

#[derive(Args)]
pub struct InspectArgs {
    /// Model file, or a raw structure document for an untrained view.
    #[arg(long)]
    pub model: PathBuf,
    /// Cap on the number of expanded paths for structure documents.
    #[arg(long)]
    pub max_paths: Option<usize>,
}

#[derive(Args)]
pub struct GenSynthArgs {
    /// Dataset family.
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    /// Number of rows.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Number of classes (k-blobs only).
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SynthKind {
    /// Two opposing Gaussian clouds, labels -1 and +1.
    TwoGaussians,
    /// Concentric noisy rings, labels +1 (inner) and -1 (outer).
    XorRings,
    /// Gaussian blobs on a circle, labels 0..k.
    KBlobs,
}

/// A command failure: exit code plus a one-line diagnostic.
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Failure {
        Failure {
            code,
            message: message.into(),
        }
    }

    /// Maps a library error onto the exit-code contract.
    pub fn from_core(err: spnmkl::Error) -> Failure {
        use spnmkl::Error::*;
        let code = match err {
            DuplicateNodeId(_)
            | UnknownChild { .. }
            | UnknownRoot(_)
            | CycleDetected(_)
            | UnreachableNode(_)
            | WeightOnNonProduct(_)
            | NonpositiveExponent { .. }
            | MalformedLeaf(_)
            | EmptyChildren(_)
            | KernelOnInternal(_)
            | UnknownKernelRef { .. }
            | NonAlternatingStructure { .. }
            | PathCapExceeded { .. }
            | InvalidDocument(_)
            | InvalidKernelSpec { .. }
            | VersionMismatch { .. }
            | CorruptModel(_)
            | Json(_) => 2,
            NonFiniteInput { .. }
            | ZeroNormRow { .. }
            | DimensionMismatch { .. }
            | NotPsd { .. }
            | DataFormat { .. }
            | EmptyDataset => 3,
            SingleClass
            | BadBinaryLabels
            | ContinuityViolation { .. }
            | BelowFloor { .. }
            | SingularGradient { .. }
            | EmptyModel => 4,
            Io(_) => 1,
        };
        Failure::new(code, err.to_string())
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Help and version displays exit cleanly.
        Err(err) if err.exit_code() == 0 => {
            let _ = err.print();
            std::process::exit(0);
        }
        Err(err) => fail(Failure::new(2, err.to_string())),
    };

    let level = match cli.log_level.parse::<log::LevelFilter>() {
        Ok(level) => level,
        Err(_) => fail(Failure::new(
            2,
            format!("unknown log level `{}`", cli.log_level),
        )),
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    let run = thread_cap().and_then(|()| match &cli.command {
        Cmd::Train(args) => commands::train(args),
        Cmd::Predict(args) => commands::predict(args),
        Cmd::Inspect(args) => commands::inspect(args),
        Cmd::GenSynth(args) => commands::gen_synth(args),
    });
    if let Err(failure) = run {
        fail(failure);
    }
}

/// Applies the `SPNMKL_THREADS` cap to the global worker pool.
fn thread_cap() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("SPNMKL_THREADS") else {
        return Ok(());
    };
    let workers: usize = raw.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::new(
            2,
            format!("SPNMKL_THREADS must be a positive integer, got `{raw}`"),
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Failure::new(1, format!("cannot configure the worker pool: {e}")))
}

/// Prints the machine-parseable error record and exits.
fn fail(failure: Failure) -> ! {
    let record = serde_json::json!({
        "error": failure.message,
        "exit_code": failure.code,
    });
    eprintln!("{record}");
    std::process::exit(failure.code);
}
