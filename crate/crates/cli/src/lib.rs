//! Command-line front end for the acoustic pipeline: geometric
//! low-order reflections, parametric synthesis, metrics, dataset
//! generation/analysis, toy-model training, and a bench harness.

pub mod audio;
pub mod bench;
pub mod data;
pub mod defaults;
pub mod io;
pub mod learn;
pub mod report;

use std::fmt::Display;
use std::path::{Path, PathBuf};

use aurasim_dataset::DatasetError;
use clap::{Parser, Subcommand};
use thiserror::Error;

/// Errors surfaced to the shell, each mapped to a stable exit code:
/// bad invocations exit 2, file problems (with the offending path) and
/// other runtime failures exit 1, internal faults exit 70.
#[derive(Debug, Error)]
pub enum CliError {
    /// The message always names the offending path.
    #[error("{msg}")]
    File { path: PathBuf, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Run(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    /// Wrap an error that does not already mention `path` in its message.
    pub fn file(path: impl AsRef<Path>, msg: impl Display) -> CliError {
        let path = path.as_ref().to_path_buf();
        let msg = format!("{}: {msg}", path.display());
        CliError::File { path, msg }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::File { .. } | CliError::Run(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 70,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> CliError {
        match e {
            DatasetError::Io { ref path, .. } | DatasetError::Format { ref path, .. } => {
                CliError::File { path: path.clone(), msg: e.to_string() }
            }
            DatasetError::BadRange { .. } => CliError::Usage(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<WavError> for CliError {
    fn from(e: WavError) -> CliError {
        let path = match &e {
            WavError::Hound { path, .. }
            | WavError::Io { path, .. }
            | WavError::Json { path, .. }
            | WavError::ChannelCount { path, .. }
            | WavError::SampleFormat { path, .. } => PathBuf::from(path),
        };
        CliError::File { path, msg: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "aurasim", version, about = "Desk-scale room acoustics toolkit")]
pub struct Cli {
    /// Emit machine-readable JSON on stdout instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    /// Master seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Simulate low-order reflections and write a 4-channel WAV.
    SimulateLor(audio::SimulateLorArgs),
    /// Synthesize a full impulse response from perceptual parameters.
    Synthesize(audio::SynthesizeArgs),
    /// Convolve an impulse response with a mono audio file.
    Render(audio::RenderArgs),
    /// Compare two impulse responses across the metric suite.
    Metrics(report::MetricsArgs),
    /// Generate or analyze a dataset of simulated responses.
    #[command(subcommand)]
    Dataset(data::DatasetCmd),
    /// Train the toy parameter-prediction model on a dataset.
    Train(learn::TrainArgs),
    /// Run a trained model on one dataset entry.
    Infer(learn::InferArgs),
    /// Time the pipeline stages on this machine.
    Bench(bench::BenchArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Copy)]
pub struct Global {
    pub json: bool,
    pub seed: Option<u64>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = Global { json: cli.json, seed: cli.seed };
    match cli.command {
        Command::SimulateLor(args) => audio::simulate_lor(&args, g),
        Command::Synthesize(args) => audio::synthesize(&args, g),
        Command::Render(args) => audio::render(&args, g),
        Command::Metrics(args) => report::metrics(&args, g),
        Command::Dataset(data::DatasetCmd::Gen(args)) => data::generate(&args, g),
        Command::Dataset(data::DatasetCmd::Analyze(args)) => data::analyze(&args, g),
        Command::Train(args) => learn::train(&args, g),
        Command::Infer(args) => learn::infer(&args, g),
        Command::Bench(args) => bench::bench(&args, g),
    }
}
