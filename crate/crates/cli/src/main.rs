//! `tacseg`: synthesize demonstrations, filter trigger artifacts, train,
//! evaluate and run skill segmenters.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;
use tacseg_core::pipeline::{ModalitySet, Target};
use tacseg_core::seqmodels::Arch;
use tacseg_core::synthgen::DEFAULT_DEMOS;
use tacseg_core::windower::{DEFAULT_STRIDE, DEFAULT_WINDOW};

#[derive(Debug, Parser)]
#[command(name = "tacseg", version, about = "Frame-wise skill segmentation of multimodal manipulation demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Replace trigger-action spikes in the F/T stream with baseline noise.
    FtFilter(FtFilterArgs),
    /// Train a skill segmenter or a trigger detector.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled split.
    Eval(EvalArgs),
    /// Label recordings and export probabilities, label CSVs and timelines.
    Infer(InferArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Common frame rate in Hz.
    #[arg(long, default_value_t = 16.67)]
    pub rate_hz: f64,
    /// Window length in frames.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Window stride in frames.
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    pub stride: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DEMOS)]
    pub demos: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 3)]
    pub clips: usize,
    /// Frame rate of the embedding streams in Hz.
    #[arg(long, default_value_t = 16.67)]
    pub rate_hz: f64,
    /// Leave the F/T stream free of trigger spikes.
    #[arg(long)]
    pub no_triggers: bool,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("source").required(true).args(["oracle", "checkpoint", "intervals"])))]
pub struct FtFilterArgs {
    /// Dataset directory (with splits.json) or a single recording directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Use the injected intervals from each recording's ground truth.
    #[arg(long)]
    pub oracle: bool,
    /// Trigger detector checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Interval CSV for a single recording.
    #[arg(long)]
    pub intervals: Option<PathBuf>,
    /// Frames added to each side of detected intervals [default: 2 with a
    /// checkpoint, 0 otherwise].
    #[arg(long)]
    pub pad: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = Arch::Bilstm)]
    pub arch: Arch,
    #[arg(long, default_value_t = Target::Skill)]
    pub target: Target,
    /// Comma-separated subset of camera,tactile,ft,pose.
    #[arg(long, default_value_t = ModalitySet::ALL)]
    pub modalities: ModalitySet,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    /// Largest idle fraction a training window may have [default: 0.8 for
    /// skills, 1.0 for triggers].
    #[arg(long)]
    pub max_idle_ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Column name in the F1 table [default: architecture and modalities].
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    /// Dataset directory (with splits.json) or a single recording directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub grid: GridArgs,
}

/// Bad flag values caught after parsing; reported like clap's own errors.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Reads `TACSEG_THREADS`. Work runs on one thread, which honors any cap.
fn thread_cap() -> Result<Option<usize>, UsageError> {
    match std::env::var("TACSEG_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(UsageError(format!("TACSEG_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(cap) = thread_cap()? {
        log::debug!("worker cap {cap}, running single-threaded");
    }
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::FtFilter(a) => commands::ft_filter(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
