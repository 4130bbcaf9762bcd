//! Global root trajectory from root-relative poses and 2D observations.
//!
//! Minimizes, over the root positions `C_1..C_F`,
//!
//! ```text
//! sum_t sum_i (1 - M_it) |rho(X_it + C_t) - x_it|^2
//!   + lambda1 sum_t |C_t - C_{t-1}|^2
//!   + lambda2 sum_t |C_{t-1} + C_{t+1} - 2 C_t|^2
//! ```
//!
//! with Levenberg-Marquardt. The smoothness terms couple each frame to its
//! two neighbors on either side, so the normal matrix is banded with
//! half-bandwidth 8 and each step costs O(F).

mod banded;

pub use banded::{BandedSpd, NotPositiveDefinite};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::camera::{project, project_jacobian, CameraError, CameraIntrinsics, Point2, Point3};
use crate::mask::{fill_track, OcclusionMask};

/// Frames with fewer visible joints are not used to initialize depth.
pub const MIN_VISIBLE_FOR_INIT: usize = 2;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrajectoryError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("smoothness weights must be non-negative, got ({0}, {1})")]
    Weights(f64, f64),
    #[error("frame {frame}: {source}")]
    Camera {
        frame: usize,
        #[source]
        source: CameraError,
    },
    #[error("no frame has at least {MIN_VISIBLE_FOR_INIT} visible joints")]
    InsufficientObservations,
    #[error("every frame is fully occluded and both smoothness weights are zero")]
    Unsolvable,
}

#[derive(Clone, Debug)]
pub struct TrajectoryProblem {
    /// Root-relative joints per frame, millimeters.
    pub rel: Vec<Vec<Point3>>,
    /// Observed joints per frame, pixels.
    pub obs: Vec<Vec<Point2>>,
    pub mask: OcclusionMask,
    pub cam: CameraIntrinsics,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl TrajectoryProblem {
    pub fn new(
        rel: Vec<Vec<Point3>>,
        obs: Vec<Vec<Point2>>,
        mask: OcclusionMask,
        cam: CameraIntrinsics,
        lambda1: f64,
        lambda2: f64,
    ) -> Result<Self, TrajectoryError> {
        let p = Self {
            rel,
            obs,
            mask,
            cam,
            lambda1,
            lambda2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(TrajectoryError::Weights(self.lambda1, self.lambda2));
        }
        let f = self.rel.len();
        let n = self.mask.n_joints();
        if self.obs.len() != f || self.mask.n_frames() != f {
            return Err(TrajectoryError::Shape(format!(
                "{f} pose frames, {} observation frames, {} mask frames",
                self.obs.len(),
                self.mask.n_frames()
            )));
        }
        if self.rel.iter().any(|r| r.len() != n) || self.obs.iter().any(|o| o.len() != n) {
            return Err(TrajectoryError::Shape(format!("every frame must have {n} joints")));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.rel.len()
    }

    pub fn visible_counts(&self) -> Vec<usize> {
        (0..self.n_frames()).map(|t| self.mask.visible_in_frame(t)).collect()
    }

    /// Frames `start..start + len` as an independent problem.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            rel: self.rel[start..start + len].to_vec(),
            obs: self.obs[start..start + len].to_vec(),
            mask: self.mask.slice_frames(start, len),
            cam: self.cam,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    fn check_roots(&self, roots: &[Point3]) -> Result<(), TrajectoryError> {
        if roots.len() != self.n_frames() {
            return Err(TrajectoryError::Shape(format!(
                "{} roots for {} frames",
                roots.len(),
                self.n_frames()
            )));
        }
        Ok(())
    }

    /// Visible-joint residuals `rho(X + C) - x` of one frame.
    fn frame_residuals(&self, t: usize, root: &Point3) -> Result<Vec<(usize, Point2)>, TrajectoryError> {
        let mut out = Vec::new();
        for (i, (x, obs)) in self.rel[t].iter().zip(&self.obs[t]).enumerate() {
            if self.mask.is_occluded(i, t) {
                continue;
            }
            let px = project(&(x + root), &self.cam).map_err(|source| TrajectoryError::Camera { frame: t, source })?;
            out.push((i, px - obs));
        }
        Ok(out)
    }
}

fn second_diff(roots: &[Point3], t: usize) -> Point3 {
    roots[t - 1] + roots[t + 1] - 2.0 * roots[t]
}

/// Value of the objective at `roots`.
pub fn objective(problem: &TrajectoryProblem, roots: &[Point3]) -> Result<f64, TrajectoryError> {
    problem.check_roots(roots)?;
    let mut data = 0.0;
    for (t, root) in roots.iter().enumerate() {
        for (_, r) in problem.frame_residuals(t, root)? {
            data += r.norm_squared();
        }
    }
    let first: f64 = roots.windows(2).map(|w| (w[1] - w[0]).norm_squared()).sum();
    let second: f64 = (1..roots.len().saturating_sub(1))
        .map(|t| second_diff(roots, t).norm_squared())
        .sum();
    Ok(data + problem.lambda1 * first + problem.lambda2 * second)
}

/// Analytic gradient of [`objective`], one row per frame.
pub fn objective_gradient(problem: &TrajectoryProblem, roots: &[Point3]) -> Result<Vec<Point3>, TrajectoryError> {
    problem.check_roots(roots)?;
    let mut g = vec![Point3::zeros(); roots.len()];
    for (t, root) in roots.iter().enumerate() {
        for (i, r) in problem.frame_residuals(t, root)? {
            let j = project_jacobian(&(problem.rel[t][i] + root), &problem.cam)
                .map_err(|source| TrajectoryError::Camera { frame: t, source })?;
            g[t] += 2.0 * j.transpose() * r;
        }
    }
    if problem.lambda1 > 0.0 {
        for t in 1..roots.len() {
            let d = 2.0 * problem.lambda1 * (roots[t] - roots[t - 1]);
            g[t] += d;
            g[t - 1] -= d;
        }
    }
    if problem.lambda2 > 0.0 {
        for t in 1..roots.len().saturating_sub(1) {
            let s = 2.0 * problem.lambda2 * second_diff(roots, t);
            g[t - 1] += s;
            g[t + 1] += s;
            g[t] -= 2.0 * s;
        }
    }
    Ok(g)
}

fn rms_spread<T: Copy>(points: &[T], sub: impl Fn(T, T) -> f64, mean: T) -> f64 {
    (points.iter().map(|&p| sub(p, mean)).sum::<f64>() / points.len() as f64).sqrt()
}

/// Starting point for the solver.
///
/// Depth comes from the ratio of the metric and pixel spreads of the visible
/// joints, measured in the image plane (X and Y only), so a pose parallel to
/// the image plane at depth `Z` gives exactly `Z`. The in-plane position then
/// follows from back-projecting the visible centroid. Frames with fewer than
/// two visible joints are linearly interpolated from their neighbors.
pub fn init_trajectory(problem: &TrajectoryProblem) -> Result<Vec<Point3>, TrajectoryError> {
    let f = problem.n_frames();
    let cam = &problem.cam;
    let mut coords = [vec![0.0; f], vec![0.0; f], vec![0.0; f]];
    let mut missing = vec![true; f];
    for t in 0..f {
        let vis: Vec<usize> = (0..problem.mask.n_joints())
            .filter(|&i| !problem.mask.is_occluded(i, t))
            .collect();
        if vis.len() < MIN_VISIBLE_FOR_INIT {
            continue;
        }
        let n = vis.len() as f64;
        let m3 = vis.iter().map(|&i| problem.rel[t][i]).sum::<Point3>() / n;
        let m2 = vis.iter().map(|&i| problem.obs[t][i]).sum::<Point2>() / n;
        let p3: Vec<Point3> = vis.iter().map(|&i| problem.rel[t][i]).collect();
        let p2: Vec<Point2> = vis.iter().map(|&i| problem.obs[t][i]).collect();
        let s3 = rms_spread(&p3, |a, b| (a.x - b.x).powi(2) + (a.y - b.y).powi(2), m3);
        let s2 = rms_spread(&p2, |a, b| (a - b).norm_squared(), m2);
        if !(s2 > 0.0 && s3 > 0.0) {
            continue;
        }
        let z = cam.f * s3 / s2;
        let n2 = cam.normalize(&m2);
        coords[0][t] = n2.x * z - m3.x;
        coords[1][t] = n2.y * z - m3.y;
        coords[2][t] = z - m3.z;
        missing[t] = false;
    }
    if missing.iter().all(|&m| m) {
        return Err(TrajectoryError::InsufficientObservations);
    }
    for c in &mut coords {
        fill_track(c, &missing);
    }
    Ok((0..f).map(|t| Point3::new(coords[0][t], coords[1][t], coords[2][t])).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Millimeters.
    pub step_tolerance: f64,
    pub relative_tolerance: f64,
    pub initial_damping: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tolerance: 1e-6,
            relative_tolerance: 1e-10,
            initial_damping: 1e-3,
            damping_increase: 10.0,
            damping_decrease: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySolution {
    pub roots: Vec<Point3>,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub visible_counts: Vec<usize>,
    /// No joint is visible in any frame; the roots are the initialization.
    pub zero_data: bool,
}

const DAMPING_CAP: f64 = 1e16;
const DIAGONAL_FLOOR: f64 = 1e-9;
const HALF_BANDWIDTH: usize = 8;

/// Gauss-Newton normal equations `J^T J` and `J^T r` of the stacked residual.
fn normal_equations(problem: &TrajectoryProblem, roots: &[Point3]) -> Result<(BandedSpd, Vec<f64>), TrajectoryError> {
    let f = roots.len();
    let mut h = BandedSpd::zeros(3 * f, HALF_BANDWIDTH);
    let mut g = vec![0.0; 3 * f];
    for (t, root) in roots.iter().enumerate() {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Point3::zeros();
        for (i, r) in problem.frame_residuals(t, root)? {
            let j = project_jacobian(&(problem.rel[t][i] + root), &problem.cam)
                .map_err(|source| TrajectoryError::Camera { frame: t, source })?;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        for a in 0..3 {
            g[3 * t + a] += jtr[a];
            for b in 0..=a {
                h.add(3 * t + a, 3 * t + b, jtj[(a, b)]);
            }
        }
    }
    // Each smoothness residual is sqrt(w) * sum_k c_k C_{t_k}, applied per axis.
    let add_term = |h: &mut BandedSpd, g: &mut [f64], w: f64, terms: &[(usize, f64)]| {
        for axis in 0..3 {
            let r: f64 = terms.iter().map(|&(t, c)| c * roots[t][axis]).sum();
            for &(ta, ca) in terms {
                g[3 * ta + axis] += w * ca * r;
                for &(tb, cb) in terms {
                    if ta >= tb {
                        h.add(3 * ta + axis, 3 * tb + axis, w * ca * cb);
                    }
                }
            }
        }
    };
    if problem.lambda1 > 0.0 {
        for t in 1..f {
            add_term(&mut h, &mut g, problem.lambda1, &[(t - 1, -1.0), (t, 1.0)]);
        }
    }
    if problem.lambda2 > 0.0 {
        for t in 1..f.saturating_sub(1) {
            add_term(&mut h, &mut g, problem.lambda2, &[(t - 1, 1.0), (t, -2.0), (t + 1, 1.0)]);
        }
    }
    Ok((h, g))
}

/// Levenberg-Marquardt from `init`. The objective never increases: a trial
/// step is only taken when it lowers the objective.
pub fn solve(
    problem: &TrajectoryProblem,
    init: &[Point3],
    opts: &SolverOptions,
) -> Result<TrajectorySolution, TrajectoryError> {
    problem.validate()?;
    problem.check_roots(init)?;
    let visible_counts = problem.visible_counts();
    let f0 = objective(problem, init)?;
    if visible_counts.iter().all(|&c| c == 0) {
        if problem.lambda1 == 0.0 && problem.lambda2 == 0.0 {
            return Err(TrajectoryError::Unsolvable);
        }
        return Ok(TrajectorySolution {
            roots: init.to_vec(),
            objective: f0,
            initial_objective: f0,
            iterations: 0,
            converged: true,
            visible_counts,
            zero_data: true,
        });
    }

    let mut roots = init.to_vec();
    let mut fx = f0;
    let mut mu = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    let mut system = normal_equations(problem, &roots)?;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (h, g) = &system;
        let mut damped = h.clone();
        for (i, d) in h.diagonal().into_iter().enumerate() {
            damped.add(i, i, mu * d.max(DIAGONAL_FLOOR));
        }
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let step = match damped.solve(&rhs) {
            Ok(s) => s,
            Err(_) => {
                mu *= opts.damping_increase;
                if mu > DAMPING_CAP {
                    break;
                }
                continue;
            }
        };
        let step_norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        let trial: Vec<Point3> = roots
            .iter()
            .enumerate()
            .map(|(t, c)| c + Point3::new(step[3 * t], step[3 * t + 1], step[3 * t + 2]))
            .collect();
        let f_trial = objective(problem, &trial).unwrap_or(f64::INFINITY);
        if f_trial < fx {
            let decrease = (fx - f_trial) / fx.max(f64::MIN_POSITIVE);
            roots = trial;
            fx = f_trial;
            mu *= opts.damping_decrease;
            if step_norm < opts.step_tolerance || decrease < opts.relative_tolerance {
                converged = true;
                break;
            }
            system = normal_equations(problem, &roots)?;
        } else {
            if step_norm < opts.step_tolerance {
                converged = true;
                break;
            }
            mu *= opts.damping_increase;
            if mu > DAMPING_CAP {
                converged = true;
                break;
            }
        }
    }
    log::debug!("trajectory solve: {iterations} iterations, objective {f0:.6e} -> {fx:.6e}");
    Ok(TrajectorySolution {
        roots,
        objective: fx,
        initial_objective: f0,
        iterations,
        converged,
        visible_counts,
        zero_data: false,
    })
}

/// Chunk start offsets covering `n` frames with windows of `chunk` frames
/// advancing by `chunk - overlap`; the last window ends at frame `n`.
pub fn chunk_starts(n: usize, chunk: usize, overlap: usize) -> Vec<usize> {
    if n <= chunk {
        return vec![0];
    }
    let step = chunk.saturating_sub(overlap).max(1);
    let mut starts = vec![0];
    while starts.last().expect("non-empty") + chunk < n {
        let next = (starts.last().expect("non-empty") + step).min(n - chunk);
        starts.push(next);
    }
    starts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StitchedTrajectory {
    pub roots: Vec<Point3>,
    pub visible_counts: Vec<usize>,
    /// Per frame: every chunk covering the frame converged.
    pub converged: Vec<bool>,
    pub chunks: Vec<TrajectorySolution>,
}

/// Solves overlapping chunks independently and blends them. Inside an
/// overlap the weights ramp linearly from one chunk to the next.
pub fn solve_long(
    problem: &TrajectoryProblem,
    chunk: usize,
    overlap: usize,
    opts: &SolverOptions,
) -> Result<StitchedTrajectory, TrajectoryError> {
    problem.validate()?;
    let n = problem.n_frames();
    if n == 0 || chunk == 0 {
        return Err(TrajectoryError::Shape("need at least one frame and a positive chunk size".into()));
    }
    let init = init_trajectory(problem)?;
    let starts = chunk_starts(n, chunk, overlap);
    let mut acc = vec![Point3::zeros(); n];
    let mut weight = vec![0.0; n];
    let mut converged = vec![true; n];
    let mut chunks = Vec::with_capacity(starts.len());
    for &s in &starts {
        let len = chunk.min(n - s);
        let sol = solve(&problem.slice(s, len), &init[s..s + len], opts)?;
        for k in 0..len {
            // tent weight: linear ramps toward both chunk ends
            let w = if starts.len() == 1 { 1.0 } else { (k + 1).min(len - k) as f64 };
            acc[s + k] += w * sol.roots[k];
            weight[s + k] += w;
            converged[s + k] &= sol.converged;
        }
        chunks.push(sol);
    }
    Ok(StitchedTrajectory {
        roots: acc.iter().zip(&weight).map(|(c, w)| c / *w).collect(),
        visible_counts: problem.visible_counts(),
        converged,
        chunks,
    })
}
