use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use gatedpose::camera::Point3;
use gatedpose::io::load_trajectory;
use gatedpose::metrics::{protocol1, protocol2, to_global, EvalSequence, ScaleGranularity};

use super::{by_person, check_same_frames, sequences};
use crate::config::{required, EvalSettings, ScaleMode};
use crate::manifest::RunRecord;
use crate::CliError;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?))
}

/// Predicted roots per person from a trajectory file, in frame order.
fn trajectory_roots(path: &Path) -> Result<BTreeMap<u32, Vec<(u64, Point3)>>, CliError> {
    let mut roots: BTreeMap<u32, Vec<(u64, Point3)>> = BTreeMap::new();
    for row in load_trajectory(path)? {
        roots
            .entry(row.person)
            .or_default()
            .push((row.frame, Point3::new(row.x_mm, row.y_mm, row.z_mm)));
    }
    Ok(roots)
}

pub fn run(s: &EvalSettings) -> Result<RunRecord, CliError> {
    let pred_path = required(&s.pred, "pred", "eval")?;
    let gt_path = required(&s.gt, "gt", "eval")?;
    if s.protocol != 1 && s.protocol != 2 {
        return Err(CliError::data(format!("protocol must be 1 or 2, got {}", s.protocol)));
    }
    let mut preds = by_person(sequences(pred_path)?);
    let mut traj = match &s.traj {
        Some(p) => Some(trajectory_roots(p)?),
        None => None,
    };
    let mut eval = Vec::new();
    for gt in sequences(gt_path)? {
        let pred = preds
            .remove(&gt.person)
            .ok_or_else(|| CliError::data(format!("{} has no person {}", pred_path.display(), gt.person)))?;
        check_same_frames(&pred, &gt, "prediction and ground truth")?;
        let missing = |what: &str, file: &Path| CliError::data(format!("person {}: no {what} in {}", gt.person, file.display()));
        let pred_rel = pred.joints_3d_rel.ok_or_else(|| missing("3D joints", pred_path))?;
        let gt_rel = gt.joints_3d_rel.ok_or_else(|| missing("3D joints", gt_path))?;
        let (pred_pts, gt_pts) = if s.protocol == 1 {
            (pred_rel, gt_rel)
        } else {
            let pred_roots: Vec<Point3> = match traj.as_mut() {
                Some(t) => {
                    let rows = t.remove(&gt.person).unwrap_or_default();
                    if rows.iter().map(|r| r.0).ne(gt.frames.iter().copied()) {
                        return Err(CliError::data(format!(
                            "person {}: trajectory frames do not match the ground truth",
                            gt.person
                        )));
                    }
                    rows.into_iter().map(|r| r.1).collect()
                }
                None => pred
                    .root
                    .ok_or_else(|| CliError::data(format!("protocol 2 needs --traj or roots in {}", pred_path.display())))?,
            };
            let gt_roots = gt.root.ok_or_else(|| missing("roots", gt_path))?;
            (to_global(&pred_rel, &pred_roots), to_global(&gt_rel, &gt_roots))
        };
        eval.push(EvalSequence {
            person: gt.person,
            action: gt.action,
            frames: gt.frames,
            pred: pred_pts,
            gt: gt_pts,
        });
    }
    let report = if s.protocol == 1 {
        protocol1(&eval)?
    } else {
        let granularity = match s.scale {
            ScaleMode::PerSequence => ScaleGranularity::PerSequence,
            ScaleMode::PerFrame => ScaleGranularity::PerFrame,
        };
        protocol2(&eval, granularity)?
    };
    print!("{}", report.table("Ours"));
    println!("protocol {}: {:.4} mm over {} frames", s.protocol, report.overall_mm, report.per_frame.len());

    let mut outputs = Vec::new();
    if let Some(p) = &s.out {
        report.write_summary_csv(create(p)?)?;
        outputs.push(p.clone());
    }
    if let Some(p) = &s.frames {
        report.write_frames_csv(create(p)?)?;
        outputs.push(p.clone());
    }
    let mut inputs = vec![pred_path.to_path_buf(), gt_path.to_path_buf()];
    inputs.extend(s.traj.clone());
    Ok(RunRecord {
        seed: None,
        inputs,
        outputs,
    })
}
