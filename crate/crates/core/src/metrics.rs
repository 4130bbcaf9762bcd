//! Pose error metrics.
//!
//! Protocol 1 aligns every predicted frame to the ground truth with a
//! similarity transform (rotation, translation, scale) before measuring the
//! mean per-joint position error. Protocol 2 compares camera-coordinate poses
//! (root trajectory included) after a scale-only alignment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Point3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("count mismatch: {0}")]
    Mismatch(String),
    #[error("prediction is all zeros; scale is undefined")]
    UndefinedScale,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Point3) -> Point3 {
        self.scale * self.rotation * p + self.translation
    }
}

fn centroid(points: &[Point3]) -> Point3 {
    points.iter().sum::<Point3>() / points.len() as f64
}

/// Least-squares similarity transform taking `pred` onto `gt`, with a proper
/// rotation (`det R = +1`). Returns the transform and the aligned prediction.
pub fn procrustes_align(pred: &[Point3], gt: &[Point3]) -> Result<(Similarity, Vec<Point3>), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Mismatch(format!("{} vs {} joints", pred.len(), gt.len())));
    }
    if gt.len() < 3 {
        return Err(MetricsError::Degenerate(format!("{} points", gt.len())));
    }
    let (mp, mg) = (centroid(pred), centroid(gt));
    let mut cov = Matrix3::zeros();
    let mut gt_scatter = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (pc, gc) = (p - mp, g - mg);
        cov += gc * pc.transpose();
        gt_scatter += gc * gc.transpose();
        var_p += pc.norm_squared();
    }
    let gs = gt_scatter.symmetric_eigenvalues();
    let mut ev: Vec<f64> = gs.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[1] > 1e-12 * ev[0].max(f64::MIN_POSITIVE)) {
        return Err(MetricsError::Degenerate("ground truth is collinear".into()));
    }
    if !(var_p > 0.0) {
        return Err(MetricsError::Degenerate("prediction collapses to a point".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let d = (u * v_t).determinant().signum();
    let s_fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = u * s_fix * v_t;
    let sv = svd.singular_values;
    let scale = (sv[0] + sv[1] + d * sv[2]) / var_p;
    let translation = mg - scale * rotation * mp;
    let sim = Similarity {
        scale,
        rotation,
        translation,
    };
    let aligned = pred.iter().map(|p| sim.apply(p)).collect();
    Ok((sim, aligned))
}

/// Mean Euclidean distance between corresponding joints.
pub fn mpjpe(pred: &[Point3], gt: &[Point3]) -> f64 {
    pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).sum::<f64>() / gt.len() as f64
}

/// Root-mean-square joint distance; the quantity both alignments minimize.
pub fn rms_error(pred: &[Point3], gt: &[Point3]) -> f64 {
    (pred.iter().zip(gt).map(|(p, g)| (p - g).norm_squared()).sum::<f64>() / gt.len() as f64).sqrt()
}

fn dot_all(a: &[Vec<Point3>], b: &[Vec<Point3>]) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| p.dot(q))).sum()
}

/// Scale `s` minimizing `sum |s pred - gt|^2`.
pub fn optimal_scale(pred: &[Vec<Point3>], gt: &[Vec<Point3>]) -> Result<f64, MetricsError> {
    let pp = dot_all(pred, pred);
    if pp == 0.0 {
        return Err(MetricsError::UndefinedScale);
    }
    Ok(dot_all(pred, gt) / pp)
}

/// Root-relative joints plus root positions, giving camera-coordinate joints.
pub fn to_global(rel: &[Vec<Point3>], roots: &[Point3]) -> Vec<Vec<Point3>> {
    rel.iter()
        .zip(roots)
        .map(|(pose, c)| pose.iter().map(|x| x + c).collect())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    One,
    Two,
}

impl Protocol {
    pub fn number(self) -> u8 {
        match self {
            Protocol::One => 1,
            Protocol::Two => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleGranularity {
    #[default]
    PerSequence,
    PerFrame,
}

/// Predicted and ground-truth joints of one person over consecutive frames.
#[derive(Clone, Debug)]
pub struct EvalSequence {
    pub person: u32,
    pub action: String,
    pub frames: Vec<u64>,
    pub pred: Vec<Vec<Point3>>,
    pub gt: Vec<Vec<Point3>>,
}

impl EvalSequence {
    fn check(&self) -> Result<(), MetricsError> {
        let ok = self.pred.len() == self.gt.len()
            && self.frames.len() == self.gt.len()
            && self.pred.iter().zip(&self.gt).all(|(p, g)| p.len() == g.len());
        if ok {
            Ok(())
        } else {
            Err(MetricsError::Mismatch(format!(
                "person {}: prediction and ground truth differ in frame or joint counts",
                self.person
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub person: u32,
    pub frame: u64,
    pub action: String,
    pub error_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionError {
    pub action: String,
    pub frames: usize,
    pub mean_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub per_action: Vec<ActionError>,
    pub overall_mm: f64,
    pub per_frame: Vec<FrameError>,
}

impl EvalReport {
    fn from_frames(protocol: Protocol, per_frame: Vec<FrameError>) -> Self {
        let mut groups: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
        for f in &per_frame {
            let e = groups.entry(&f.action).or_default();
            e.0 += 1;
            e.1 += f.error_mm;
        }
        let per_action = groups
            .into_iter()
            .map(|(a, (n, sum))| ActionError {
                action: a.to_string(),
                frames: n,
                mean_mm: sum / n as f64,
            })
            .collect();
        let overall_mm = if per_frame.is_empty() {
            0.0
        } else {
            per_frame.iter().map(|f| f.error_mm).sum::<f64>() / per_frame.len() as f64
        };
        Self {
            protocol,
            per_action,
            overall_mm,
            per_frame,
        }
    }

    /// `action,frames,mean_mm` rows, ending with an `Avg` row.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut csv = csv::Writer::from_writer(w);
        for a in &self.per_action {
            csv.serialize(a)?;
        }
        csv.serialize(ActionError {
            action: "Avg".into(),
            frames: self.per_frame.len(),
            mean_mm: self.overall_mm,
        })?;
        csv.flush()?;
        Ok(())
    }

    pub fn write_frames_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut csv = csv::Writer::from_writer(w);
        for f in &self.per_frame {
            csv.serialize(f)?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Text table: actions in blocks of eight columns, the last block ending
    /// with the average.
    pub fn table(&self, row_label: &str) -> String {
        let mut cells: Vec<(String, f64)> = self.per_action.iter().map(|a| (a.action.clone(), a.mean_mm)).collect();
        cells.push(("Avg.".into(), self.overall_mm));
        let label_w = row_label.len().max(8);
        let mut out = format!("3D Pose Error (Protocol {}, Errors in mm)\n", self.protocol.number());
        for block in cells.chunks(8) {
            let widths: Vec<usize> = block.iter().map(|(n, _)| n.len().max(6)).collect();
            let rule = "-".repeat(label_w + widths.iter().map(|w| w + 1).sum::<usize>());
            let _ = writeln!(out, "{rule}");
            let _ = write!(out, "{:label_w$}", "");
            for ((name, _), w) in block.iter().zip(&widths) {
                let _ = write!(out, " {name:>w$}");
            }
            let _ = writeln!(out);
            let _ = writeln!(out, "{rule}");
            let _ = write!(out, "{row_label:label_w$}");
            for ((_, v), w) in block.iter().zip(&widths) {
                let _ = write!(out, " {v:>w$.1}");
            }
            let _ = writeln!(out);
        }
        out
    }
}

/// Per-frame similarity alignment, then MPJPE.
pub fn protocol1(seqs: &[EvalSequence]) -> Result<EvalReport, MetricsError> {
    let mut frames = Vec::new();
    for s in seqs {
        s.check()?;
        for (t, (p, g)) in s.pred.iter().zip(&s.gt).enumerate() {
            let (_, aligned) = procrustes_align(p, g)?;
            frames.push(FrameError {
                person: s.person,
                frame: s.frames[t],
                action: s.action.clone(),
                error_mm: mpjpe(&aligned, g),
            });
        }
    }
    Ok(EvalReport::from_frames(Protocol::One, frames))
}

/// Scale-only alignment of camera-coordinate poses, then MPJPE.
pub fn protocol2(seqs: &[EvalSequence], granularity: ScaleGranularity) -> Result<EvalReport, MetricsError> {
    let mut frames = Vec::new();
    for s in seqs {
        s.check()?;
        let seq_scale = match granularity {
            ScaleGranularity::PerSequence => Some(optimal_scale(&s.pred, &s.gt)?),
            ScaleGranularity::PerFrame => None,
        };
        for (t, (p, g)) in s.pred.iter().zip(&s.gt).enumerate() {
            let scale = match seq_scale {
                Some(v) => v,
                None => optimal_scale(std::slice::from_ref(p), std::slice::from_ref(g))?,
            };
            let aligned: Vec<Point3> = p.iter().map(|x| scale * x).collect();
            frames.push(FrameError {
                person: s.person,
                frame: s.frames[t],
                action: s.action.clone(),
                error_mm: mpjpe(&aligned, g),
            });
        }
    }
    Ok(EvalReport::from_frames(Protocol::Two, frames))
}
