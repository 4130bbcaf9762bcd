//! Command-line flags. Every option is optional here; unset flags fall back
//! to the config file and then to the built-in defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gatedpose::network::{FillMode, GateMode};
use serde::Serialize;

use crate::config::{MaskSource, ScaleMode};

#[derive(Debug, Parser)]
#[command(name = "gatedpose", version, about = "Occlusion-robust 3D pose lifting and trajectory recovery")]
pub struct Cli {
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-person scene and its camera file.
    Synth(SynthArgs),
    /// Add random long-time occlusion masks to a sequence file.
    Maskgen(MaskgenArgs),
    /// Train a pose-lifting network on sequences with 3D ground truth.
    Train(TrainArgs),
    /// Predict root-relative 3D poses for every frame of a sequence file.
    Infer(InferArgs),
    /// Recover global root trajectories from predicted poses and 2D observations.
    Traj(TrajArgs),
    /// Score predictions against ground truth under protocol 1 or 2.
    Eval(EvalArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Maskgen(_) => "maskgen",
            Command::Train(_) => "train",
            Command::Infer(_) => "infer",
            Command::Traj(_) => "traj",
            Command::Eval(_) => "eval",
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    /// Output sequence file (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Output camera file [default: <out>.camera.json]
    #[arg(long, value_name = "FILE")]
    pub camera: Option<PathBuf>,
    #[arg(long)]
    pub people: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gaussian 2D noise, pixels.
    #[arg(long)]
    pub pixel_noise: Option<f64>,
    /// Mask threshold; conflicts with --occlusion-ratio.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Target occluded fraction; the threshold is calibrated for it.
    #[arg(long)]
    pub occlusion_ratio: Option<f64>,
    /// Temporal smoothing kernel of the masks (odd).
    #[arg(long)]
    pub kernel_k: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct MaskgenArgs {
    /// Input sequence file.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Output sequence file with embedded masks.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub occlusion_ratio: Option<f64>,
    #[arg(long)]
    pub kernel_k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep masks already in the file and add the new occlusion to them.
    #[arg(long, value_name = "BOOL")]
    pub merge: Option<bool>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    /// Training sequence file with 3D ground truth.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Validation sequence file, scored after every epoch.
    #[arg(long, value_name = "FILE")]
    pub val: Option<PathBuf>,
    /// Camera file of the sequences.
    #[arg(long, value_name = "FILE")]
    pub camera: Option<PathBuf>,
    /// Checkpoint path, rewritten after every epoch.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Loss history CSV [default: <out> with extension history.csv]
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
    /// Continue from the checkpoint at --out if it exists.
    #[arg(long, value_name = "BOOL")]
    pub resume: Option<bool>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Input window; a power of the kernel size (27, 81, 243, ...).
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    /// two_stream, single_stream or plain.
    #[arg(long)]
    pub gate_mode: Option<GateMode>,
    #[arg(long, value_name = "BOOL")]
    pub batch_norm: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    pub gate_batch_norm: Option<bool>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Standardize every input coordinate with training-set statistics.
    #[arg(long, value_name = "BOOL")]
    pub standardize: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// zero or interp.
    #[arg(long)]
    pub fill: Option<FillMode>,
    /// Occlusion seen in training: data, random or none.
    #[arg(long, value_enum)]
    pub masks: Option<MaskSource>,
    /// Random-mask thresholds (comma separated); conflicts with --occlusion-ratio.
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,
    /// Random-mask occluded fractions (comma separated), one drawn per sample.
    #[arg(long, value_delimiter = ',')]
    pub occlusion_ratio: Option<Vec<f64>>,
    #[arg(long)]
    pub kernel_k: Option<usize>,
    /// Detector confidence below which a joint counts as occluded.
    #[arg(long)]
    pub confidence_threshold: Option<f64>,
    /// Windows used to re-estimate batch-norm statistics per epoch (0 = off).
    #[arg(long)]
    pub bn_calibration_windows: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct InferArgs {
    /// Trained checkpoint.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Sequence file with 2D detections.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub camera: Option<PathBuf>,
    /// Output sequence file with predicted root-relative 3D joints.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub fill: Option<FillMode>,
    #[arg(long)]
    pub confidence_threshold: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrajArgs {
    /// Sequence file with root-relative 3D joints (output of infer).
    #[arg(long, value_name = "FILE")]
    pub poses: Option<PathBuf>,
    /// Sequence file with the 2D observations.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub camera: Option<PathBuf>,
    /// Output trajectory CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Frames per optimization chunk.
    #[arg(long)]
    pub chunk_frames: Option<usize>,
    /// Frames shared by consecutive chunks [default: half a chunk]
    #[arg(long)]
    pub overlap: Option<usize>,
    #[arg(long)]
    pub confidence_threshold: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Predicted sequence file.
    #[arg(long, value_name = "FILE")]
    pub pred: Option<PathBuf>,
    /// Ground-truth sequence file.
    #[arg(long, value_name = "FILE")]
    pub gt: Option<PathBuf>,
    /// Trajectory CSV giving the predicted roots (protocol 2).
    #[arg(long, value_name = "FILE")]
    pub traj: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub protocol: Option<u8>,
    /// Protocol-2 scale fit: per-sequence or per-frame.
    #[arg(long, value_enum)]
    pub scale: Option<ScaleMode>,
    /// Per-action summary CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Per-frame error CSV.
    #[arg(long, value_name = "FILE")]
    pub frames: Option<PathBuf>,
}
