//! Occlusion masks: synthetic long-time occlusion, confidence thresholding,
//! and the temporal linear-interpolation baseline.
//!
//! A mask entry of `true` (1) means the joint is occluded in that frame.
//! Masks are stored per joint; the `u` and `v` coordinate rows of a joint
//! always share one row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Confidence below which a detected keypoint counts as occluded.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MaskError {
    #[error("theta must lie in [0, 1], got {0}")]
    Theta(f64),
    #[error("temporal kernel must be a positive odd integer, got {0}")]
    Kernel(usize),
    #[error("target ratio must lie in [0, 1], got {0}")]
    Ratio(f64),
    #[error("joints {0:?} are never visible and cannot be filled")]
    Unfillable(Vec<usize>),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionMask {
    n_joints: usize,
    n_frames: usize,
    /// Joint-major: `occluded[j * n_frames + t]`.
    occluded: Vec<bool>,
}

impl OcclusionMask {
    pub fn visible(n_joints: usize, n_frames: usize) -> Self {
        Self {
            n_joints,
            n_frames,
            occluded: vec![false; n_joints * n_frames],
        }
    }

    pub fn from_joint_rows(rows: &[Vec<bool>]) -> Result<Self, MaskError> {
        let n_frames = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_frames) {
            return Err(MaskError::Shape("ragged mask rows".into()));
        }
        Ok(Self {
            n_joints: rows.len(),
            n_frames,
            occluded: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    #[inline]
    pub fn is_occluded(&self, joint: usize, frame: usize) -> bool {
        self.occluded[joint * self.n_frames + frame]
    }

    pub fn set(&mut self, joint: usize, frame: usize, occluded: bool) {
        self.occluded[joint * self.n_frames + frame] = occluded;
    }

    pub fn joint_row(&self, joint: usize) -> &[bool] {
        &self.occluded[joint * self.n_frames..(joint + 1) * self.n_frames]
    }

    /// Row `r` of the `2 N x T` coordinate view (rows `2j` and `2j + 1` are joint `j`).
    pub fn coordinate_row(&self, r: usize) -> &[bool] {
        self.joint_row(r / 2)
    }

    /// Occlusion flags of every joint in one frame.
    pub fn frame(&self, t: usize) -> Vec<bool> {
        (0..self.n_joints).map(|j| self.is_occluded(j, t)).collect()
    }

    /// Dense `2 N x T` matrix of 0/1 values, row-major.
    pub fn coordinate_matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.occluded.len());
        for j in 0..self.n_joints {
            let row: Vec<f64> = self.joint_row(j).iter().map(|&o| f64::from(u8::from(o))).collect();
            out.extend_from_slice(&row);
            out.extend_from_slice(&row);
        }
        out
    }

    /// Frames `start..start + len`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Self {
        let rows: Vec<Vec<bool>> = (0..self.n_joints)
            .map(|j| self.joint_row(j)[start..start + len].to_vec())
            .collect();
        Self::from_joint_rows(&rows).expect("equal lengths")
    }

    pub fn union(&self, other: &Self) -> Result<Self, MaskError> {
        if self.n_joints != other.n_joints || self.n_frames != other.n_frames {
            return Err(MaskError::Shape("mask union of different shapes".into()));
        }
        Ok(Self {
            n_joints: self.n_joints,
            n_frames: self.n_frames,
            occluded: self.occluded.iter().zip(&other.occluded).map(|(a, b)| *a || *b).collect(),
        })
    }

    pub fn count_occluded(&self) -> usize {
        self.occluded.iter().filter(|&&o| o).count()
    }

    pub fn visible_in_frame(&self, t: usize) -> usize {
        (0..self.n_joints).filter(|&j| !self.is_occluded(j, t)).count()
    }
}

/// Fraction of occluded entries; 0 for an empty mask.
pub fn occluded_fraction(mask: &OcclusionMask) -> f64 {
    if mask.occluded.is_empty() {
        return 0.0;
    }
    mask.count_occluded() as f64 / mask.occluded.len() as f64
}

/// Mean length of maximal runs of consecutive occluded frames, over all joint rows.
pub fn mean_run_length(mask: &OcclusionMask) -> f64 {
    let (mut runs, mut total) = (0usize, 0usize);
    for j in 0..mask.n_joints {
        let mut prev = false;
        for &o in mask.joint_row(j) {
            if o {
                total += 1;
                if !prev {
                    runs += 1;
                }
            }
            prev = o;
        }
    }
    if runs == 0 {
        0.0
    } else {
        total as f64 / runs as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskGenConfig {
    pub theta: f64,
    pub kernel: usize,
    pub n_joints: usize,
    pub n_frames: usize,
    pub seed: u64,
}

impl MaskGenConfig {
    pub fn validate(&self) -> Result<(), MaskError> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(MaskError::Theta(self.theta));
        }
        check_kernel(self.kernel)
    }
}

fn check_kernel(kernel: usize) -> Result<(), MaskError> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        Err(MaskError::Kernel(kernel))
    } else {
        Ok(())
    }
}

/// Uniform scores averaged over a centered window of `kernel` frames, one row
/// per joint, with replicate padding at the sequence ends.
pub fn smoothed_scores<R: Rng + ?Sized>(
    rng: &mut R,
    kernel: usize,
    n_joints: usize,
    n_frames: usize,
) -> Vec<f64> {
    let half = (kernel / 2) as isize;
    let mut out = Vec::with_capacity(n_joints * n_frames);
    let mut raw = vec![0.0; n_frames];
    for _ in 0..n_joints {
        raw.iter_mut().for_each(|p| *p = rng.random::<f64>());
        for t in 0..n_frames as isize {
            let s: f64 = (-half..=half)
                .map(|o| raw[(t + o).clamp(0, n_frames as isize - 1) as usize])
                .sum();
            out.push(s / kernel as f64);
        }
    }
    out
}

/// Draws a mask `M = 1{P_hat > theta}` from `rng`.
pub fn generate_mask_with<R: Rng + ?Sized>(
    rng: &mut R,
    theta: f64,
    kernel: usize,
    n_joints: usize,
    n_frames: usize,
) -> OcclusionMask {
    let scores = smoothed_scores(rng, kernel, n_joints, n_frames);
    OcclusionMask {
        n_joints,
        n_frames,
        occluded: scores.iter().map(|&p| p > theta).collect(),
    }
}

pub fn generate_mask(cfg: &MaskGenConfig) -> Result<OcclusionMask, MaskError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(generate_mask_with(
        &mut rng,
        cfg.theta,
        cfg.kernel,
        cfg.n_joints,
        cfg.n_frames,
    ))
}

const CALIBRATION_ROW: usize = 256;

/// Finds the threshold whose occluded fraction on `n_samples` Monte Carlo
/// scores equals `target`, by bisection.
pub fn calibrate_theta(
    target: f64,
    kernel: usize,
    n_samples: usize,
    seed: u64,
) -> Result<f64, MaskError> {
    if !(0.0..=1.0).contains(&target) {
        return Err(MaskError::Ratio(target));
    }
    check_kernel(kernel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = n_samples.div_ceil(CALIBRATION_ROW).max(1);
    let scores = smoothed_scores(&mut rng, kernel, rows, CALIBRATION_ROW);
    let fraction = |theta: f64| scores.iter().filter(|&&p| p > theta).count() as f64 / scores.len() as f64;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if fraction(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Joint occluded iff its confidence is strictly below `threshold`.
/// `conf` holds one row of per-frame confidences per joint.
pub fn confidence_to_mask(conf: &[Vec<f64>], threshold: f64) -> Result<OcclusionMask, MaskError> {
    let rows: Vec<Vec<bool>> = conf
        .iter()
        .map(|r| r.iter().map(|&c| c < threshold).collect())
        .collect();
    OcclusionMask::from_joint_rows(&rows)
}

/// Fills occluded entries of one track in place. Interior gaps are linearly
/// interpolated, leading/trailing gaps hold the nearest visible value.
/// Returns `false` if no entry is visible.
pub fn fill_track(values: &mut [f64], occluded: &[bool]) -> bool {
    let visible: Vec<usize> = (0..values.len()).filter(|&t| !occluded[t]).collect();
    let (Some(&first), Some(&last)) = (visible.first(), visible.last()) else {
        return false;
    };
    for t in 0..first {
        values[t] = values[first];
    }
    for t in last + 1..values.len() {
        values[t] = values[last];
    }
    for w in visible.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a > 1 {
            let (va, vb) = (values[a], values[b]);
            let span = (b - a) as f64;
            for (k, v) in values[a + 1..b].iter_mut().enumerate() {
                let s = (k + 1) as f64 / span;
                *v = va + s * (vb - va);
            }
        }
    }
    true
}

/// Linear-interpolation baseline over `2 N` coordinate rows of length `T`.
/// Visible entries are returned unchanged.
pub fn interpolate_missing(
    coord_rows: &[Vec<f64>],
    mask: &OcclusionMask,
) -> Result<Vec<Vec<f64>>, MaskError> {
    if coord_rows.len() != 2 * mask.n_joints()
        || coord_rows.iter().any(|r| r.len() != mask.n_frames())
    {
        return Err(MaskError::Shape(format!(
            "{} coordinate rows for a {}x{} mask",
            coord_rows.len(),
            mask.n_joints(),
            mask.n_frames()
        )));
    }
    let mut out = coord_rows.to_vec();
    let mut unfillable = Vec::new();
    for (r, row) in out.iter_mut().enumerate() {
        if !fill_track(row, mask.coordinate_row(r)) && r % 2 == 0 {
            unfillable.push(r / 2);
        }
    }
    if unfillable.is_empty() {
        Ok(out)
    } else {
        Err(MaskError::Unfillable(unfillable))
    }
}

/// Run-length encoding of one row: alternating run lengths, starting with a
/// (possibly empty) visible run.
pub fn encode_runs(row: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0;
    for &o in row {
        if o == current {
            len += 1;
        } else {
            runs.push(len);
            current = o;
            len = 1;
        }
    }
    if len > 0 || runs.is_empty() {
        runs.push(len);
    }
    runs
}

pub fn decode_runs(runs: &[usize]) -> Vec<bool> {
    let mut row = Vec::with_capacity(runs.iter().sum());
    for (i, &len) in runs.iter().enumerate() {
        row.extend(std::iter::repeat_n(i % 2 == 1, len));
    }
    row
}
