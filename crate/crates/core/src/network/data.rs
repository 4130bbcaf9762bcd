//! Training windows: normalized 2D input, occlusion mask and center-frame
//! 3D target, with masks optionally redrawn for every sample.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{pick, NetworkError, OUTPUT_SCALE_MM};
use crate::autodiff::Tensor3;
use crate::camera::{CameraIntrinsics, Point2};
use crate::io::PoseSequence;
use crate::mask::{fill_track, generate_mask_with, OcclusionMask};

/// Where the occlusion of a training window comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MaskPolicy {
    /// The sequence's own occlusion (low confidence or stored mask).
    Data,
    /// A fresh random mask per sample draw, with a threshold picked uniformly
    /// from `thetas`, merged with the sequence's own occlusion.
    Random { thetas: Vec<f64>, kernel: usize },
    /// Everything visible.
    None,
}

/// What occluded input coordinates are replaced with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    Zero,
    /// Linear interpolation along time from visible neighbours in the window;
    /// joints never visible in the window are zeroed.
    Interp,
}

impl std::str::FromStr for FillMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "zero" => Ok(FillMode::Zero),
            "interp" => Ok(FillMode::Interp),
            other => Err(format!("unknown fill mode {other:?} (expected zero or interp)")),
        }
    }
}

/// Per-channel standardization `(x - mean) / std` of the `2 N` input rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(n_joints: usize) -> Self {
        Self {
            mean: vec![0.0; 2 * n_joints],
            std: vec![1.0; 2 * n_joints],
        }
    }

    /// Mean and standard deviation of the visible entries of each row.
    /// Rows with no visible entries, or no spread, keep the identity.
    pub fn fit(seqs: &[PreparedSequence]) -> Self {
        let n = seqs.first().map_or(0, PreparedSequence::n_joints);
        let mut norm = Self::identity(n);
        for r in 0..2 * n {
            let vals: Vec<f64> = seqs
                .iter()
                .flat_map(|s| s.coords[r].iter().zip(s.mask.coordinate_row(r)).filter(|(_, &o)| !o).map(|(v, _)| *v))
                .collect();
            if vals.is_empty() {
                continue;
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64).sqrt();
            norm.mean[r] = mean;
            if std > 1e-12 {
                norm.std[r] = std;
            }
        }
        norm
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.std.iter().all(|&s| s == 1.0)
    }
}

/// A sequence converted to network units.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSequence {
    pub person: u32,
    pub action: String,
    /// `2 N` rows of normalized image coordinates `(p - c) / f`, further
    /// standardized once [`PreparedSequence::standardize`] has been applied.
    pub coords: Vec<Vec<f64>>,
    pub mask: OcclusionMask,
    /// Per frame, `3 N` root-relative coordinates in meters.
    pub target: Option<Vec<Vec<f64>>>,
}

impl PreparedSequence {
    pub fn from_pose(seq: &PoseSequence, cam: &CameraIntrinsics, confidence_threshold: f64) -> Self {
        let n = seq.n_joints();
        let mut coords = vec![Vec::with_capacity(seq.len()); 2 * n];
        for frame in &seq.joints_2d {
            for (j, p) in frame.iter().enumerate() {
                let q: Point2 = cam.normalize(p);
                coords[2 * j].push(q.x);
                coords[2 * j + 1].push(q.y);
            }
        }
        let target = seq.joints_3d_rel.as_ref().map(|frames| {
            frames
                .iter()
                .map(|pose| pose.iter().flat_map(|p| [p.x, p.y, p.z]).map(|v| v / OUTPUT_SCALE_MM).collect())
                .collect()
        });
        Self {
            person: seq.person,
            action: seq.action.clone(),
            coords,
            mask: seq.occlusion(confidence_threshold),
            target,
        }
    }

    pub fn len(&self) -> usize {
        self.mask.n_frames()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_joints(&self) -> usize {
        self.mask.n_joints()
    }

    /// Applies `norm` to the coordinate rows.
    pub fn standardize(&mut self, norm: &InputNorm) {
        for (r, row) in self.coords.iter_mut().enumerate() {
            row.iter_mut().for_each(|v| *v = (*v - norm.mean[r]) / norm.std[r]);
        }
    }

    /// Input rows with occluded entries replaced per `fill`.
    pub fn filled_coords(&self, mask: &OcclusionMask, fill: FillMode) -> Vec<Vec<f64>> {
        let mut rows = self.coords.clone();
        fill_rows(&mut rows, mask, fill);
        rows
    }
}

fn fill_rows(rows: &mut [Vec<f64>], mask: &OcclusionMask, fill: FillMode) {
    for (r, row) in rows.iter_mut().enumerate() {
        let occ = mask.coordinate_row(r);
        let filled = fill == FillMode::Interp && fill_track(row, occ);
        if !filled {
            row.iter_mut().zip(occ).filter(|(_, &o)| o).for_each(|(v, _)| *v = 0.0);
        }
    }
}

/// One window: `2 N x T` inputs and mask (row-major), center-frame target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor3,
    pub m: Tensor3,
    /// Batch-major `3 N` targets in meters.
    pub target: Vec<f64>,
}

/// All windows of a set of sequences; samples are materialized on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub sequences: Vec<PreparedSequence>,
    /// `(sequence, first frame)` of every window.
    pub windows: Vec<(usize, usize)>,
    pub window: usize,
    /// Sequences shorter than the window.
    pub skipped: usize,
    pub policy: MaskPolicy,
    pub fill: FillMode,
}

/// Enumerates every full window of length `window`: `max(0, len - window + 1)`
/// per sequence. Shorter sequences are skipped and counted.
pub fn make_training_windows(
    sequences: Vec<PreparedSequence>,
    window: usize,
    policy: MaskPolicy,
    fill: FillMode,
) -> Result<TrainingSet, NetworkError> {
    if window == 0 {
        return Err(NetworkError::Config("window must be positive".into()));
    }
    if let MaskPolicy::Random { thetas, kernel } = &policy {
        if thetas.is_empty() || thetas.iter().any(|t| !(0.0..=1.0).contains(t)) || kernel % 2 == 0 {
            return Err(NetworkError::Config(format!(
                "random masks need thetas in [0, 1] and an odd kernel, got {thetas:?} / {kernel}"
            )));
        }
    }
    let mut windows = Vec::new();
    let mut skipped = 0;
    for (s, seq) in sequences.iter().enumerate() {
        if seq.target.is_none() {
            return Err(NetworkError::Shape(format!("person {} has no 3D ground truth", seq.person)));
        }
        if seq.len() < window {
            skipped += 1;
            continue;
        }
        windows.extend((0..=seq.len() - window).map(|start| (s, start)));
    }
    if skipped > 0 {
        log::warn!("{skipped} sequence(s) shorter than the {window}-frame window were skipped");
    }
    Ok(TrainingSet {
        sequences,
        windows,
        window,
        skipped,
        policy,
        fill,
    })
}

/// Seed of the mask drawn for sample `index` in `epoch`.
fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn n_joints(&self) -> usize {
        self.sequences.first().map_or(0, PreparedSequence::n_joints)
    }

    /// Materializes window `index`. Random masks depend only on
    /// `(seed, epoch, index)`.
    pub fn sample(&self, index: usize, seed: u64, epoch: usize) -> Sample {
        let (s, start) = self.windows[index];
        let seq = &self.sequences[s];
        let t = self.window;
        let n = seq.n_joints();
        let mut mask = match self.policy {
            MaskPolicy::None => OcclusionMask::visible(n, t),
            _ => seq.mask.slice_frames(start, t),
        };
        if let MaskPolicy::Random { thetas, kernel } = &self.policy {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, epoch, index));
            let theta = *pick(&mut rng, thetas);
            let drawn = generate_mask_with(&mut rng, theta, *kernel, n, t);
            mask = mask.union(&drawn).expect("same shape");
        }
        let mut rows: Vec<Vec<f64>> = seq.coords.iter().map(|r| r[start..start + t].to_vec()).collect();
        fill_rows(&mut rows, &mask, self.fill);
        let target = seq.target.as_ref().expect("checked at construction")[start + (t - 1) / 2].clone();
        Sample {
            x: rows.concat(),
            m: mask.coordinate_matrix(),
            target,
        }
    }

    pub fn batch(&self, indices: &[usize], seed: u64, epoch: usize) -> Batch {
        let n = self.n_joints();
        let dims = [indices.len(), 2 * n, self.window];
        let mut x = Vec::with_capacity(dims.iter().product());
        let mut m = Vec::with_capacity(x.capacity());
        let mut target = Vec::with_capacity(indices.len() * 3 * n);
        for &i in indices {
            let s = self.sample(i, seed, epoch);
            x.extend(s.x);
            m.extend(s.m);
            target.extend(s.target);
        }
        Batch {
            x: Tensor3::from_vec(dims, x).expect("sizes match"),
            m: Tensor3::from_vec(dims, m).expect("sizes match"),
            target,
        }
    }
}
