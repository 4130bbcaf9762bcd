//! Resolved settings: built-in defaults, overridden by the `--config` file,
//! overridden by flags.
//!
//! The config file has one table per subcommand whose keys are the flag
//! names without the leading dashes:
//!
//! ```toml
//! [train]
//! channels = 128
//! occlusion-ratio = [0.0, 0.25, 0.5]
//! ```

use std::path::{Path, PathBuf};

use gatedpose::mask::DEFAULT_CONFIDENCE_THRESHOLD;
use gatedpose::network::{FillMode, GateMode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Kernel of the random occlusion masks when none is given.
pub const DEFAULT_MASK_KERNEL: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSource {
    /// The sequences' own occlusion.
    Data,
    /// Fresh random masks per sample, merged with the sequences' own.
    Random,
    /// Everything visible.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleMode {
    PerSequence,
    PerFrame,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthSettings {
    pub out: Option<PathBuf>,
    pub camera: Option<PathBuf>,
    pub people: usize,
    pub frames: usize,
    pub seed: u64,
    pub pixel_noise: f64,
    pub theta: Option<f64>,
    pub occlusion_ratio: Option<f64>,
    pub kernel_k: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            out: None,
            camera: None,
            people: 4,
            frames: 1000,
            seed: 0,
            pixel_noise: 0.0,
            theta: None,
            occlusion_ratio: None,
            kernel_k: DEFAULT_MASK_KERNEL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct MaskgenSettings {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub theta: Option<f64>,
    pub occlusion_ratio: Option<f64>,
    pub kernel_k: usize,
    pub seed: u64,
    pub merge: bool,
}

impl Default for MaskgenSettings {
    fn default() -> Self {
        Self {
            input: None,
            out: None,
            theta: None,
            occlusion_ratio: None,
            kernel_k: DEFAULT_MASK_KERNEL,
            seed: 0,
            merge: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainSettings {
    pub data: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub camera: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub resume: bool,
    pub channels: usize,
    pub window: usize,
    pub kernel_size: usize,
    pub gate_mode: GateMode,
    pub batch_norm: bool,
    pub gate_batch_norm: bool,
    pub dropout: f64,
    pub standardize: bool,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub seed: u64,
    pub fill: FillMode,
    pub masks: MaskSource,
    pub theta: Option<Vec<f64>>,
    pub occlusion_ratio: Vec<f64>,
    pub kernel_k: usize,
    pub confidence_threshold: f64,
    pub bn_calibration_windows: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            data: None,
            val: None,
            camera: None,
            out: None,
            history: None,
            resume: false,
            channels: 1024,
            window: 243,
            kernel_size: 3,
            gate_mode: GateMode::TwoStream,
            batch_norm: true,
            gate_batch_norm: true,
            dropout: 0.0,
            standardize: true,
            epochs: 80,
            batch: 1024,
            lr: 0.001,
            lr_decay: 0.95,
            seed: 0,
            fill: FillMode::Zero,
            masks: MaskSource::Random,
            theta: None,
            occlusion_ratio: vec![0.0, 0.25, 0.5],
            kernel_k: DEFAULT_MASK_KERNEL,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            bn_calibration_windows: 4096,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct InferSettings {
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub camera: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub fill: FillMode,
    pub confidence_threshold: f64,
}

impl Default for InferSettings {
    fn default() -> Self {
        Self {
            model: None,
            input: None,
            camera: None,
            out: None,
            fill: FillMode::Zero,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrajSettings {
    pub poses: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub camera: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub chunk_frames: usize,
    pub overlap: Option<usize>,
    pub confidence_threshold: f64,
}

impl Default for TrajSettings {
    fn default() -> Self {
        Self {
            poses: None,
            input: None,
            camera: None,
            out: None,
            lambda1: 1.0,
            lambda2: 1.0,
            chunk_frames: 100,
            overlap: None,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalSettings {
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub traj: Option<PathBuf>,
    pub protocol: u8,
    pub scale: ScaleMode,
    pub out: Option<PathBuf>,
    pub frames: Option<PathBuf>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            pred: None,
            gt: None,
            traj: None,
            protocol: 1,
            scale: ScaleMode::PerSequence,
            out: None,
            frames: None,
        }
    }
}

/// Reads the `section` table of a TOML config file (empty if absent).
pub fn load_section(path: &Path, section: &str) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let doc: Value = toml::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    match doc.get(section) {
        None => Ok(Map::new()),
        Some(Value::Object(m)) => Ok(m.clone()),
        Some(_) => Err(CliError::data(format!("{}: [{section}] must be a table", path.display()))),
    }
}

/// Layers `flags` over `file` over `T::default()`.
pub fn resolve<T: DeserializeOwned, A: Serialize>(file: Map<String, Value>, flags: &A) -> Result<T, CliError> {
    let mut merged = file;
    let Value::Object(flags) = serde_json::to_value(flags).map_err(|e| CliError::data(e.to_string()))? else {
        unreachable!("flag structs serialize to objects")
    };
    merged.extend(flags.into_iter().filter(|(_, v)| !v.is_null()));
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::data(format!("invalid configuration: {e}")))
}

/// A path that must be set by flag or config.
pub fn required<'a>(value: &'a Option<PathBuf>, flag: &str, command: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("{command} requires --{flag} (or `{flag}` in the [{command}] config table)")))
}
