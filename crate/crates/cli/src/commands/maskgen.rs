use gatedpose::io::save_sequences;
use gatedpose::mask::{generate_mask_with, MaskGenConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mask_threshold, sequences};
use crate::config::{required, MaskgenSettings};
use crate::manifest::RunRecord;
use crate::CliError;

/// Draws one mask per person, each person from its own stream of `seed`.
pub fn run(s: &MaskgenSettings) -> Result<RunRecord, CliError> {
    let input = required(&s.input, "input", "maskgen")?;
    let out = required(&s.out, "out", "maskgen")?;
    let theta = mask_threshold(s.theta, s.occlusion_ratio, s.kernel_k, s.seed)?
        .ok_or_else(|| CliError::Usage("maskgen requires --theta or --occlusion-ratio".into()))?;
    let mut seqs = sequences(input)?;
    let (mut occluded, mut total) = (0usize, 0usize);
    for seq in &mut seqs {
        let cfg = MaskGenConfig {
            theta,
            kernel: s.kernel_k,
            n_joints: seq.n_joints(),
            n_frames: seq.len(),
            seed: s.seed,
        };
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(u64::from(seq.person));
        let drawn = generate_mask_with(&mut rng, theta, s.kernel_k, cfg.n_joints, cfg.n_frames);
        let mask = match (&seq.mask, s.merge) {
            (Some(old), true) => old.union(&drawn)?,
            _ => drawn,
        };
        occluded += mask.count_occluded();
        total += mask.n_joints() * mask.n_frames();
        seq.mask = Some(mask);
    }
    save_sequences(out, &seqs)?;
    log::info!(
        "theta {theta:.4}, kernel {}: {:.1}% of joints occluded",
        s.kernel_k,
        100.0 * occluded as f64 / total.max(1) as f64
    );
    Ok(RunRecord {
        seed: Some(s.seed),
        inputs: vec![input.to_path_buf()],
        outputs: vec![out.to_path_buf()],
    })
}
