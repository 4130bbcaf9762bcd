//! Pinhole projection with a single focal length, no skew and no distortion.
//!
//! 3D points are in millimeters in camera coordinates (X right, Y down,
//! Z forward); image points are in pixels.

use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub type Point3 = Vector3<f64>;
pub type Point2 = Vector2<f64>;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CameraError {
    #[error("focal length must be positive and finite, got {0}")]
    InvalidFocal(f64),
    #[error("point at depth {0} mm is not in front of the camera")]
    BehindCamera(f64),
    #[error("joint count mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(f: f64, cx: f64, cy: f64) -> Result<Self, CameraError> {
        let cam = Self { f, cx, cy };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if self.f > 0.0 && self.f.is_finite() {
            Ok(())
        } else {
            Err(CameraError::InvalidFocal(self.f))
        }
    }

    pub fn project(&self, p: &Point3) -> Result<Point2, CameraError> {
        project(p, self)
    }

    /// Maps a pixel to normalized image coordinates `((u - cx) / f, (v - cy) / f)`.
    pub fn normalize(&self, px: &Point2) -> Point2 {
        Point2::new((px.x - self.cx) / self.f, (px.y - self.cy) / self.f)
    }
}

/// `u = f X / Z + cx`, `v = f Y / Z + cy`.
pub fn project(p: &Point3, cam: &CameraIntrinsics) -> Result<Point2, CameraError> {
    if !(p.z > 0.0) {
        return Err(CameraError::BehindCamera(p.z));
    }
    Ok(Point2::new(
        cam.f * p.x / p.z + cam.cx,
        cam.f * p.y / p.z + cam.cy,
    ))
}

/// Jacobian of [`project`] with respect to the 3D point.
pub fn project_jacobian(p: &Point3, cam: &CameraIntrinsics) -> Result<Matrix2x3<f64>, CameraError> {
    if !(p.z > 0.0) {
        return Err(CameraError::BehindCamera(p.z));
    }
    let iz = 1.0 / p.z;
    let fz = cam.f * iz;
    Ok(Matrix2x3::new(
        fz,
        0.0,
        -fz * p.x * iz,
        0.0,
        fz,
        -fz * p.y * iz,
    ))
}

/// Masked squared reprojection error of one frame:
/// `sum_i (1 - M_i) |rho(X_i + C) - x_i|^2`. Occluded joints are skipped
/// entirely, so their depth and observation do not matter.
pub fn frame_projection_error(
    rel_joints: &[Point3],
    root: &Point3,
    observed: &[Point2],
    occluded: &[bool],
    cam: &CameraIntrinsics,
) -> Result<f64, CameraError> {
    if rel_joints.len() != observed.len() || rel_joints.len() != occluded.len() {
        return Err(CameraError::Shape(format!(
            "{} joints, {} observations, {} mask entries",
            rel_joints.len(),
            observed.len(),
            occluded.len()
        )));
    }
    let mut err = 0.0;
    for ((x, obs), &occ) in rel_joints.iter().zip(observed).zip(occluded) {
        if occ {
            continue;
        }
        let r = project(&(x + root), cam)? - obs;
        err += r.norm_squared();
    }
    Ok(err)
}
