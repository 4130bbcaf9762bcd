//! Synthetic scenes: rigid 17-joint skeletons driven by smooth sinusoidal
//! joint angles, walking along smooth root trajectories in front of a
//! pinhole camera. Every stored 2D point is the exact projection of the
//! stored 3D pose plus optional Gaussian pixel noise, so the data doubles as
//! an oracle for lifting, trajectory estimation and evaluation.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{project, CameraIntrinsics, Point3};
use crate::io::PoseSequence;
use crate::mask::{generate_mask_with, MaskError};
use crate::skeleton::{LimbLengths, Skeleton, N_JOINTS};

/// Confidence written for occluded joints; below the default detector threshold.
pub const OCCLUDED_CONFIDENCE: f64 = 0.1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("person {person}, frame {frame}, joint {joint}: depth {z} mm leaves the Z > 0 half-space")]
    BehindCamera {
        person: usize,
        frame: usize,
        joint: usize,
        z: f64,
    },
    #[error("invalid synthesis config: {0}")]
    Config(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub theta: f64,
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_people: usize,
    pub n_frames: usize,
    pub camera: CameraIntrinsics,
    pub seed: u64,
    pub limb_lengths: LimbLengths,
    pub occlusion: Option<OcclusionConfig>,
    /// Standard deviation of the 2D noise, pixels.
    pub pixel_noise: f64,
    pub fps: f64,
    /// Mean root depth, millimeters.
    pub root_depth: f64,
    /// Bound on the root's excursion along each axis, millimeters.
    pub root_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_people: 4,
            n_frames: 1000,
            camera: CameraIntrinsics {
                f: 1145.0,
                cx: 512.0,
                cy: 515.0,
            },
            seed: 0,
            limb_lengths: LimbLengths::default(),
            occlusion: None,
            pixel_noise: 0.0,
            fps: 50.0,
            root_depth: 4750.0,
            root_amplitude: 800.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.into()));
        if self.camera.validate().is_err() {
            return bad("camera focal length must be positive");
        }
        if !self.limb_lengths.is_valid() {
            return bad("limb lengths must be positive");
        }
        if !(self.pixel_noise >= 0.0 && self.pixel_noise.is_finite()) {
            return bad("pixel noise must be a finite non-negative number");
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive");
        }
        if !(self.root_amplitude >= 0.0 && self.root_depth.is_finite()) {
            return bad("root motion must be finite");
        }
        if let Some(o) = &self.occlusion {
            crate::mask::MaskGenConfig {
                theta: o.theta,
                kernel: o.kernel,
                n_joints: N_JOINTS,
                n_frames: self.n_frames,
                seed: 0,
            }
            .validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Walking,
    Waving,
    Turning,
    Stretching,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Walking, Action::Waving, Action::Turning, Action::Stretching];

    pub fn name(self) -> &'static str {
        match self {
            Action::Walking => "Walking",
            Action::Waving => "Waving",
            Action::Turning => "Turning",
            Action::Stretching => "Stretching",
        }
    }

    /// Peak flexion (radians) per joint subtree.
    fn amplitudes(self) -> [f64; N_JOINTS] {
        let mut a = [0.0; N_JOINTS];
        let (legs, knees, spine, neck, shoulders, elbows) = match self {
            Action::Walking => (0.45, 0.5, 0.08, 0.1, 0.35, 0.3),
            Action::Waving => (0.08, 0.1, 0.1, 0.2, 0.5, 0.7),
            Action::Turning => (0.2, 0.25, 0.12, 0.25, 0.3, 0.3),
            Action::Stretching => (0.15, 0.3, 0.35, 0.3, 1.0, 0.5),
        };
        for j in [1, 4] {
            a[j] = legs;
        }
        for j in [2, 5] {
            a[j] = knees;
        }
        a[7] = spine;
        a[8] = spine;
        a[9] = neck;
        for j in [11, 14] {
            a[j] = shoulders;
        }
        for j in [12, 15] {
            a[j] = elbows;
        }
        if self == Action::Waving {
            a[14] = 1.2;
        }
        a
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub sequences: Vec<PoseSequence>,
}

/// One sinusoidal component `a sin(2 pi f t + phi)`.
#[derive(Clone, Copy, Debug)]
struct Wave {
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Wave {
    fn random<R: Rng>(rng: &mut R, amp: f64, freq: (f64, f64)) -> Self {
        Self {
            amp,
            freq: rng.random_range(freq.0..freq.1),
            phase: rng.random_range(0.0..TAU),
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.amp * (TAU * self.freq * t + self.phase).sin()
    }
}

fn sum_waves<R: Rng>(rng: &mut R, total_amp: f64, n: usize, freq: (f64, f64)) -> Vec<Wave> {
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let norm: f64 = weights.iter().sum();
    weights
        .into_iter()
        .map(|w| Wave::random(rng, total_amp * w / norm, freq))
        .collect()
}

struct Motion {
    root: [Vec<Wave>; 3],
    root_offset: [f64; 3],
    yaw0: f64,
    yaw_rate: f64,
    yaw: Wave,
    flex: Vec<(Wave, Wave)>,
}

impl Motion {
    fn sample<R: Rng>(rng: &mut R, action: Action, cfg: &SynthConfig) -> Self {
        let a = cfg.root_amplitude;
        let root = [
            sum_waves(rng, a, 3, (0.03, 0.2)),
            sum_waves(rng, 0.1 * a, 2, (0.05, 0.3)),
            sum_waves(rng, a, 3, (0.03, 0.2)),
        ];
        let root_offset = [
            rng.random_range(-0.5..0.5) * a,
            rng.random_range(100.0..300.0),
            cfg.root_depth,
        ];
        let amps = action.amplitudes();
        let flex = amps
            .iter()
            .map(|&amp| {
                let scale = rng.random_range(0.6..1.2);
                (
                    Wave::random(rng, amp * scale, (0.4, 1.0)),
                    Wave::random(rng, 0.3 * amp * scale, (0.2, 0.8)),
                )
            })
            .collect();
        let (yaw_rate, yaw_amp) = match action {
            Action::Turning => (rng.random_range(0.3..0.8), 0.2),
            _ => (0.0, rng.random_range(0.2..0.6)),
        };
        Self {
            root,
            root_offset,
            yaw0: rng.random_range(-0.6..0.6),
            yaw_rate,
            yaw: Wave::random(rng, yaw_amp, (0.05, 0.2)),
            flex,
        }
    }

    fn root_at(&self, t: f64) -> Point3 {
        let c = |k: usize| self.root_offset[k] + self.root[k].iter().map(|w| w.at(t)).sum::<f64>();
        Point3::new(c(0), c(1), c(2))
    }

    fn rotations_at(&self, t: f64) -> (Matrix3<f64>, [Matrix3<f64>; N_JOINTS]) {
        let yaw = self.yaw0 + self.yaw_rate * t + self.yaw.at(t);
        let global = *Rotation3::from_axis_angle(&nalgebra::Vector3::y_axis(), yaw).matrix();
        let mut local = [Matrix3::identity(); N_JOINTS];
        for (j, (fx, fz)) in self.flex.iter().enumerate() {
            local[j] = *Rotation3::from_euler_angles(fx.at(t), 0.0, fz.at(t)).matrix();
        }
        (global, local)
    }
}

fn person_rng(seed: u64, person: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(person as u64 * 4 + purpose);
    rng
}

fn synth_person(cfg: &SynthConfig, person: usize, skeleton: &Skeleton) -> Result<PoseSequence, SynthError> {
    let action = Action::ALL[person % Action::ALL.len()];
    let motion = Motion::sample(&mut person_rng(cfg.seed, person, 0), action, cfg);
    let mut noise_rng = person_rng(cfg.seed, person, 1);
    let noise = Normal::new(0.0, cfg.pixel_noise).map_err(|e| SynthError::Config(e.to_string()))?;
    let mask = cfg.occlusion.as_ref().map(|o| {
        generate_mask_with(&mut person_rng(cfg.seed, person, 2), o.theta, o.kernel, N_JOINTS, cfg.n_frames)
    });

    let mut seq = PoseSequence {
        person: person as u32,
        action: action.name().into(),
        frames: (0..cfg.n_frames as u64).collect(),
        joints_2d: Vec::with_capacity(cfg.n_frames),
        confidence: Vec::with_capacity(cfg.n_frames),
        joints_3d_rel: Some(Vec::with_capacity(cfg.n_frames)),
        root: Some(Vec::with_capacity(cfg.n_frames)),
        mask: mask.clone(),
    };
    for frame in 0..cfg.n_frames {
        let t = frame as f64 / cfg.fps;
        let root = motion.root_at(t);
        let (global, local) = motion.rotations_at(t);
        let mut rel = skeleton.pose(&global, &local);
        rel[0] = Point3::zeros();
        let mut px = Vec::with_capacity(N_JOINTS);
        let mut conf = Vec::with_capacity(N_JOINTS);
        for (joint, x) in rel.iter().enumerate() {
            let p = x + root;
            let mut uv = project(&p, &cfg.camera).map_err(|_| SynthError::BehindCamera {
                person,
                frame,
                joint,
                z: p.z,
            })?;
            if cfg.pixel_noise > 0.0 {
                uv.x += noise.sample(&mut noise_rng);
                uv.y += noise.sample(&mut noise_rng);
            }
            px.push(uv);
            let occluded = mask.as_ref().is_some_and(|m| m.is_occluded(joint, frame));
            conf.push(if occluded { OCCLUDED_CONFIDENCE } else { 1.0 });
        }
        seq.joints_2d.push(px);
        seq.confidence.push(conf);
        seq.joints_3d_rel.as_mut().expect("set above").push(rel);
        seq.root.as_mut().expect("set above").push(root);
    }
    Ok(seq)
}

/// Generates one sequence per person. Each person draws from its own
/// ChaCha stream, so a person's data does not depend on how many others exist.
pub fn synth_scene(cfg: &SynthConfig) -> Result<SynthScene, SynthError> {
    cfg.validate()?;
    let skeleton = Skeleton::new(&cfg.limb_lengths);
    let sequences = (0..cfg.n_people)
        .map(|p| synth_person(cfg, p, &skeleton))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SynthScene { sequences })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{read_sequence, ungroup_sequences, write_sequence};
    use crate::skeleton::PARENTS;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_people: 4,
            n_frames: 300,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_projection_is_self_consistent() {
        let cfg = small(3);
        let scene = synth_scene(&cfg).unwrap();
        for s in &scene.sequences {
            let (j3, root) = (s.joints_3d_rel.as_ref().unwrap(), s.root.as_ref().unwrap());
            for t in 0..s.len() {
                assert_eq!(j3[t][0], Point3::zeros());
                for j in 0..N_JOINTS {
                    let px = project(&(j3[t][j] + root[t]), &cfg.camera).unwrap();
                    assert!((px - s.joints_2d[t][j]).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn limb_lengths_are_constant() {
        let cfg = small(9);
        let l = cfg.limb_lengths.per_joint();
        for s in synth_scene(&cfg).unwrap().sequences {
            for pose in s.joints_3d_rel.unwrap() {
                for j in 1..N_JOINTS {
                    let d = (pose[j] - pose[PARENTS[j].unwrap()]).norm();
                    assert!((d - l[j]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let bytes = |seed| {
            let mut cfg = small(seed);
            cfg.pixel_noise = 2.0;
            cfg.occlusion = Some(OcclusionConfig { theta: 0.6, kernel: 5 });
            let scene = synth_scene(&cfg).unwrap();
            let mut buf = Vec::new();
            write_sequence(&ungroup_sequences(&scene.sequences), &mut buf).unwrap();
            buf
        };
        assert_eq!(bytes(5), bytes(5));
        assert_ne!(bytes(5), bytes(6));
    }

    #[test]
    fn people_are_independent_of_scene_size() {
        let a = synth_scene(&small(1)).unwrap();
        let b = synth_scene(&SynthConfig { n_people: 2, ..small(1) }).unwrap();
        assert_eq!(a.sequences[..2], b.sequences[..]);
    }

    #[test]
    fn depth_stays_positive_and_motion_is_smooth() {
        let cfg = SynthConfig { n_people: 8, n_frames: 2000, ..small(4) };
        for s in synth_scene(&cfg).unwrap().sequences {
            let root = s.root.unwrap();
            assert!(root.iter().all(|r| r.z > 3000.0 && r.z < 6500.0));
            let max_step = root.windows(2).map(|w| (w[1] - w[0]).norm()).fold(0.0, f64::max);
            assert!(max_step < 40.0, "root step {max_step} mm");
        }
    }

    #[test]
    fn occlusion_sets_low_confidence() {
        let cfg = SynthConfig {
            occlusion: Some(OcclusionConfig { theta: 0.5, kernel: 3 }),
            ..small(2)
        };
        for s in synth_scene(&cfg).unwrap().sequences {
            let mask = s.mask.as_ref().unwrap();
            assert!(mask.count_occluded() > 0);
            assert_eq!(&s.occlusion(0.3), mask);
        }
    }

    #[test]
    fn scene_survives_file_round_trip() {
        let cfg = SynthConfig {
            pixel_noise: 1.5,
            occlusion: Some(OcclusionConfig { theta: 0.7, kernel: 9 }),
            ..small(8)
        };
        let scene = synth_scene(&cfg).unwrap();
        let mut buf = Vec::new();
        write_sequence(&ungroup_sequences(&scene.sequences), &mut buf).unwrap();
        let back = crate::io::group_sequences(&read_sequence(buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back, scene.sequences);
    }

    #[test]
    fn leaving_the_half_space_is_an_error() {
        let cfg = SynthConfig { root_depth: 300.0, ..small(0) };
        assert!(matches!(synth_scene(&cfg), Err(SynthError::BehindCamera { .. })));
        let bad = SynthConfig { pixel_noise: -1.0, ..small(0) };
        assert!(matches!(synth_scene(&bad), Err(SynthError::Config(_))));
    }
}
