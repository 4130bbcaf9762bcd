use std::path::PathBuf;

use gatedpose::io::{save_camera, save_sequences, CameraFile};
use gatedpose::synth::{synth_scene, OcclusionConfig, SynthConfig};

use super::mask_threshold;
use crate::config::{required, SynthSettings};
use crate::manifest::RunRecord;
use crate::CliError;

/// Image size written to the camera file.
const IMAGE_SIZE: (u32, u32) = (1000, 1002);

pub fn run(s: &SynthSettings) -> Result<RunRecord, CliError> {
    let out = required(&s.out, "out", "synth")?;
    let camera_path = s.camera.clone().unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".camera.json");
        PathBuf::from(p)
    });
    let occlusion = mask_threshold(s.theta, s.occlusion_ratio, s.kernel_k, s.seed)?.map(|theta| OcclusionConfig {
        theta,
        kernel: s.kernel_k,
    });
    let cfg = SynthConfig {
        n_people: s.people,
        n_frames: s.frames,
        seed: s.seed,
        pixel_noise: s.pixel_noise,
        occlusion,
        ..Default::default()
    };
    let scene = synth_scene(&cfg)?;
    save_sequences(out, &scene.sequences)?;
    save_camera(&camera_path, &CameraFile::new(cfg.camera, IMAGE_SIZE.0, IMAGE_SIZE.1))?;
    log::info!("wrote {} people x {} frames to {}", s.people, s.frames, out.display());
    Ok(RunRecord {
        seed: Some(s.seed),
        inputs: vec![],
        outputs: vec![out.to_path_buf(), camera_path],
    })
}
