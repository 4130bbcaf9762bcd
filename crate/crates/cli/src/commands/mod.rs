pub mod eval;
pub mod infer;
pub mod maskgen;
pub mod synth;
pub mod train;
pub mod traj;

use std::collections::BTreeMap;
use std::path::Path;

use gatedpose::camera::CameraIntrinsics;
use gatedpose::io::{load_camera, load_sequences, PoseSequence};
use gatedpose::mask::calibrate_theta;

use crate::CliError;

/// Monte Carlo entries used when turning an occlusion ratio into a threshold.
const CALIBRATION_SAMPLES: usize = 100_000;

pub fn camera(path: &Path) -> Result<CameraIntrinsics, CliError> {
    Ok(load_camera(path)?.intrinsics()?)
}

pub fn sequences(path: &Path) -> Result<Vec<PoseSequence>, CliError> {
    let seqs = load_sequences(path)?;
    if seqs.is_empty() {
        return Err(CliError::data(format!("{}: no frames", path.display())));
    }
    Ok(seqs)
}

/// Sequences keyed by person id.
pub fn by_person(seqs: Vec<PoseSequence>) -> BTreeMap<u32, PoseSequence> {
    seqs.into_iter().map(|s| (s.person, s)).collect()
}

/// The mask threshold from either `--theta` or `--occlusion-ratio`.
pub fn mask_threshold(theta: Option<f64>, ratio: Option<f64>, kernel: usize, seed: u64) -> Result<Option<f64>, CliError> {
    match (theta, ratio) {
        (Some(_), Some(_)) => Err(CliError::Usage("--theta and --occlusion-ratio are mutually exclusive".into())),
        (Some(t), None) => Ok(Some(t)),
        (None, Some(r)) => Ok(Some(threshold_for_ratio(r, kernel, seed)?)),
        (None, None) => Ok(None),
    }
}

pub fn threshold_for_ratio(ratio: f64, kernel: usize, seed: u64) -> Result<f64, CliError> {
    if ratio == 0.0 {
        return Ok(1.0);
    }
    Ok(calibrate_theta(ratio, kernel, CALIBRATION_SAMPLES, seed)?)
}

pub fn check_same_frames(a: &PoseSequence, b: &PoseSequence, what: &str) -> Result<(), CliError> {
    if a.frames != b.frames {
        return Err(CliError::data(format!(
            "person {}: {what} cover different frames ({} vs {})",
            a.person,
            a.len(),
            b.len()
        )));
    }
    Ok(())
}
