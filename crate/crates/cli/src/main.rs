//! Predictive-coding video frame prediction: training, prediction,
//! evaluation, synthetic data generation, and filter inspection.

mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use pcpredict_core::data::ShapeKind;
use pcpredict_core::modulation::FusionKind;
use pcpredict_core::resample::UpsampleKind;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pcpredict", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run configuration.
    Train(TrainArgs),
    /// Roll a trained model forward and write predicted frames as PNGs.
    Predict(PredictArgs),
    /// Score predictions against ground truth (SSIM, PSNR, perceptual).
    Evaluate(EvaluateArgs),
    /// Materialize synthetic bouncing-shape sequences.
    GenData(GenDataArgs),
    /// Print per-level statistics of the learned cutoff ratios.
    InspectFilters(InspectArgs),
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum FusionFlag {
    Modulate,
    Add,
    Concat,
}

impl From<FusionFlag> for FusionKind {
    fn from(f: FusionFlag) -> Self {
        match f {
            FusionFlag::Modulate => FusionKind::Modulate,
            FusionFlag::Add => FusionKind::Add,
            FusionFlag::Concat => FusionKind::Concat,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum UpsampleFlag {
    Interleave,
    Bilinear,
}

impl From<UpsampleFlag> for UpsampleKind {
    fn from(f: UpsampleFlag) -> Self {
        match f {
            UpsampleFlag::Interleave => UpsampleKind::Interleave,
            UpsampleFlag::Bilinear => UpsampleKind::Bilinear,
        }
    }
}

#[derive(clap::Args)]
pub struct TrainArgs {
    /// JSON run configuration (network + train + data sections).
    #[arg(long)]
    pub(crate) config: PathBuf,
    /// Output directory for checkpoint.pcpk and curve.csv.
    #[arg(long, default_value = "out")]
    pub(crate) out: PathBuf,
    /// Signal fusion ablation: modulate (default), add, or concat.
    #[arg(long, value_enum)]
    pub(crate) fusion: Option<FusionFlag>,
    /// Disable the anti-aliasing low-pass filters.
    #[arg(long)]
    pub(crate) no_filter: bool,
    /// Upsampling ablation: interleave (default) or bilinear.
    #[arg(long, value_enum)]
    pub(crate) upsample: Option<UpsampleFlag>,
    /// Kaiming-initialize the interpolation kernel instead of the
    /// inverse-distance initialization.
    #[arg(long)]
    pub(crate) no_special_init: bool,
    /// Drop the perceptual loss term.
    #[arg(long)]
    pub(crate) no_perceptual: bool,
    /// Override the configured number of training steps.
    #[arg(long)]
    pub(crate) steps: Option<usize>,
}

#[derive(clap::Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub(crate) checkpoint: PathBuf,
    /// A sequence directory of PNG frames, or a directory of such
    /// directories.
    #[arg(long)]
    pub(crate) input: PathBuf,
    /// Number of frames to predict closed-loop after the T1 context.
    #[arg(long)]
    pub(crate) horizon: usize,
    #[arg(long, default_value = "out")]
    pub(crate) out: PathBuf,
}

#[derive(clap::Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub(crate) checkpoint: PathBuf,
    #[arg(long)]
    pub(crate) input: PathBuf,
    #[arg(long)]
    pub(crate) horizon: usize,
    #[arg(long, default_value = "out")]
    pub(crate) out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindFlag {
    Square,
    Disc,
    Mix,
}

impl KindFlag {
    fn kinds(self) -> Vec<ShapeKind> {
        match self {
            KindFlag::Square => vec![ShapeKind::Square],
            KindFlag::Disc => vec![ShapeKind::Disc],
            KindFlag::Mix => vec![ShapeKind::Square, ShapeKind::Disc],
        }
    }
}

#[derive(clap::Args)]
pub struct GenDataArgs {
    #[arg(long, default_value = "data")]
    pub(crate) out: PathBuf,
    /// Number of sequences (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 8)]
    pub(crate) seqs: usize,
    #[arg(long, default_value_t = 20)]
    pub(crate) frames: usize,
    #[arg(long, default_value_t = 64)]
    pub(crate) height: usize,
    #[arg(long, default_value_t = 64)]
    pub(crate) width: usize,
    #[arg(long, default_value_t = 2)]
    pub(crate) shapes: usize,
    #[arg(long, value_enum, default_value_t = KindFlag::Square)]
    pub(crate) kind: KindFlag,
    #[arg(long, default_value_t = 0)]
    pub(crate) seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub(crate) velocity_min: f64,
    #[arg(long, default_value_t = 2.5)]
    pub(crate) velocity_max: f64,
    #[arg(long, default_value_t = 0.6)]
    pub(crate) intensity_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub(crate) intensity_max: f64,
    #[arg(long, default_value_t = 8)]
    pub(crate) size_min: usize,
    #[arg(long, default_value_t = 14)]
    pub(crate) size_max: usize,
}

#[derive(clap::Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub(crate) checkpoint: PathBuf,
    /// Also write the CSV to a file.
    #[arg(long)]
    pub(crate) out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, result) = match &cli.command {
        Command::Train(args) => ("train", commands::train(args)),
        Command::Predict(args) => ("predict", commands::predict(args)),
        Command::Evaluate(args) => ("evaluate", commands::evaluate(args)),
        Command::GenData(args) => ("gen-data", commands::gen_data(args)),
        Command::InspectFilters(args) => ("inspect-filters", commands::inspect_filters(args)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pcpredict {}: {:#}", name, e);
            ExitCode::FAILURE
        }
    }
}
