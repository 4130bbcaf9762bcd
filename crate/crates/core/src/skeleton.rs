//! The 17-joint Human3.6M skeleton and rigid forward kinematics.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Point3;

pub const N_JOINTS: usize = 17;
pub const ROOT: usize = 0;

pub const JOINT_NAMES: [&str; N_JOINTS] = [
    "Hip", "RHip", "RKnee", "RFoot", "LHip", "LKnee", "LFoot", "Spine", "Thorax", "Neck",
    "Head", "LShoulder", "LElbow", "LWrist", "RShoulder", "RElbow", "RWrist",
];

pub const PARENTS: [Option<usize>; N_JOINTS] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(0),
    Some(4),
    Some(5),
    Some(0),
    Some(7),
    Some(8),
    Some(9),
    Some(8),
    Some(11),
    Some(12),
    Some(8),
    Some(14),
    Some(15),
];

/// Bone lengths in millimeters, shared by the left and right sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimbLengths {
    pub hip: f64,
    pub thigh: f64,
    pub shin: f64,
    pub spine: f64,
    pub thorax: f64,
    pub neck: f64,
    pub head: f64,
    pub shoulder: f64,
    pub upper_arm: f64,
    pub forearm: f64,
}

impl Default for LimbLengths {
    fn default() -> Self {
        Self {
            hip: 130.0,
            thigh: 450.0,
            shin: 450.0,
            spine: 230.0,
            thorax: 250.0,
            neck: 110.0,
            head: 115.0,
            shoulder: 150.0,
            upper_arm: 280.0,
            forearm: 250.0,
        }
    }
}

impl LimbLengths {
    /// Length of the bone ending at each joint (0 for the root).
    pub fn per_joint(&self) -> [f64; N_JOINTS] {
        [
            0.0,
            self.hip,
            self.thigh,
            self.shin,
            self.hip,
            self.thigh,
            self.shin,
            self.spine,
            self.thorax,
            self.neck,
            self.head,
            self.shoulder,
            self.upper_arm,
            self.forearm,
            self.shoulder,
            self.upper_arm,
            self.forearm,
        ]
    }

    pub fn is_valid(&self) -> bool {
        self.per_joint()[1..].iter().all(|&l| l > 0.0 && l.is_finite())
    }
}

/// Rest-pose bone offsets in the body frame (x to the subject's left,
/// y down, z away from the camera when facing it).
#[derive(Clone, Debug)]
pub struct Skeleton {
    offsets: [Vector3<f64>; N_JOINTS],
}

impl Skeleton {
    pub fn new(lengths: &LimbLengths) -> Self {
        let l = lengths.per_joint();
        let (right, left, down, up) = (
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
        );
        let dirs = [
            Vector3::zeros(),
            right,
            down,
            down,
            left,
            down,
            down,
            up,
            up,
            up,
            up,
            left,
            down,
            down,
            right,
            down,
            down,
        ];
        let mut offsets = [Vector3::zeros(); N_JOINTS];
        for j in 0..N_JOINTS {
            offsets[j] = dirs[j] * l[j];
        }
        Self { offsets }
    }

    /// Root-relative joint positions. `global` rotates the whole body; `local[j]`
    /// rotates the subtree below joint `j` about that joint.
    pub fn pose(&self, global: &Matrix3<f64>, local: &[Matrix3<f64>; N_JOINTS]) -> Vec<Point3> {
        let mut rot = [Matrix3::identity(); N_JOINTS];
        let mut pos = vec![Point3::zeros(); N_JOINTS];
        rot[ROOT] = global * local[ROOT];
        for j in 1..N_JOINTS {
            let p = PARENTS[j].expect("non-root joint has a parent");
            pos[j] = pos[p] + rot[p] * self.offsets[j];
            rot[j] = rot[p] * local[j];
        }
        pos
    }
}
