use gatedpose::io::{save_sequences, PoseSequence};
use gatedpose::network::{load_checkpoint, PreparedSequence};

use super::{camera, sequences};
use crate::config::{required, InferSettings};
use crate::manifest::RunRecord;
use crate::CliError;

/// Writes the input sequences back with predicted root-relative joints and
/// the occlusion mask the prediction used.
pub fn run(s: &InferSettings) -> Result<RunRecord, CliError> {
    let model = required(&s.model, "model", "infer")?;
    let input = required(&s.input, "input", "infer")?;
    let cam_path = required(&s.camera, "camera", "infer")?;
    let out = required(&s.out, "out", "infer")?;
    let mut net = load_checkpoint(model)?.net;
    let cam = camera(cam_path)?;
    let seqs = sequences(input)?;
    if seqs[0].n_joints() != net.config.n_joints {
        return Err(CliError::data(format!(
            "model expects {} joints, {} has {}",
            net.config.n_joints,
            input.display(),
            seqs[0].n_joints()
        )));
    }
    let mut predicted = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let mut prep = PreparedSequence::from_pose(&seq, &cam, s.confidence_threshold);
        prep.standardize(&net.input_norm);
        let coords = prep.filled_coords(&prep.mask, s.fill);
        let poses = net.predict_sequence(&coords, &prep.mask)?;
        log::info!("person {}: {} frames", seq.person, poses.len());
        predicted.push(PoseSequence {
            joints_3d_rel: Some(poses),
            root: None,
            mask: Some(prep.mask),
            ..seq
        });
    }
    save_sequences(out, &predicted)?;
    Ok(RunRecord {
        seed: None,
        inputs: vec![model.to_path_buf(), input.to_path_buf(), cam_path.to_path_buf()],
        outputs: vec![out.to_path_buf()],
    })
}
