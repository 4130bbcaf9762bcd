use gatedpose::io::{save_trajectory, TrajectoryRow};
use gatedpose::trajectory::{solve_long, SolverOptions, TrajectoryProblem};

use super::{by_person, camera, check_same_frames, sequences};
use crate::config::{required, TrajSettings};
use crate::manifest::RunRecord;
use crate::CliError;

/// Solves each person's trajectory independently in overlapping chunks.
pub fn run(s: &TrajSettings) -> Result<RunRecord, CliError> {
    let poses_path = required(&s.poses, "poses", "traj")?;
    let input = required(&s.input, "input", "traj")?;
    let cam_path = required(&s.camera, "camera", "traj")?;
    let out = required(&s.out, "out", "traj")?;
    if s.chunk_frames == 0 {
        return Err(CliError::data("--chunk-frames must be positive"));
    }
    let overlap = s.overlap.unwrap_or(s.chunk_frames / 2);
    if overlap >= s.chunk_frames {
        return Err(CliError::data(format!("overlap {overlap} must be smaller than the chunk ({})", s.chunk_frames)));
    }
    let cam = camera(cam_path)?;
    let mut poses = by_person(sequences(poses_path)?);
    let opts = SolverOptions::default();
    let mut rows = Vec::new();
    for obs in sequences(input)? {
        let pose = poses
            .remove(&obs.person)
            .ok_or_else(|| CliError::data(format!("{} has no poses for person {}", poses_path.display(), obs.person)))?;
        check_same_frames(&pose, &obs, "poses and observations")?;
        let rel = pose
            .joints_3d_rel
            .ok_or_else(|| CliError::data(format!("person {}: no 3D joints in {}", obs.person, poses_path.display())))?;
        let mask = obs.occlusion(s.confidence_threshold);
        let problem = TrajectoryProblem::new(rel, obs.joints_2d.clone(), mask, cam, s.lambda1, s.lambda2)?;
        let sol = solve_long(&problem, s.chunk_frames, overlap, &opts)?;
        let unconverged = sol.converged.iter().filter(|c| !**c).count();
        log::info!(
            "person {}: {} frames in {} chunk(s), {unconverged} frame(s) not converged",
            obs.person,
            obs.len(),
            sol.chunks.len()
        );
        for t in 0..obs.len() {
            let c = sol.roots[t];
            rows.push(TrajectoryRow {
                person: obs.person,
                frame: obs.frames[t],
                x_mm: c.x,
                y_mm: c.y,
                z_mm: c.z,
                visible_count: sol.visible_counts[t],
                converged: sol.converged[t],
            });
        }
    }
    save_trajectory(out, &rows)?;
    Ok(RunRecord {
        seed: None,
        inputs: vec![poses_path.to_path_buf(), input.to_path_buf(), cam_path.to_path_buf()],
        outputs: vec![out.to_path_buf()],
    })
}
