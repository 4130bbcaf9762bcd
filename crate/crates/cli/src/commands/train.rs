use std::fs::File;
use std::io::BufWriter;

use gatedpose::camera::CameraIntrinsics;
use gatedpose::network::{
    load_checkpoint, make_training_windows, train, write_history_csv, InputNorm, MaskPolicy, NetworkConfig, PoseLiftNet,
    PreparedSequence, TrainConfig,
};

use super::{camera, sequences, threshold_for_ratio};
use crate::config::{required, MaskSource, TrainSettings};
use crate::manifest::RunRecord;
use crate::CliError;

fn prepare(path: &std::path::Path, cam: &CameraIntrinsics, threshold: f64) -> Result<Vec<PreparedSequence>, CliError> {
    Ok(sequences(path)?.iter().map(|s| PreparedSequence::from_pose(s, cam, threshold)).collect())
}

fn mask_policy(s: &TrainSettings) -> Result<MaskPolicy, CliError> {
    Ok(match s.masks {
        MaskSource::Data => MaskPolicy::Data,
        MaskSource::None => MaskPolicy::None,
        MaskSource::Random => {
            let thetas = match &s.theta {
                Some(t) => t.clone(),
                None => s
                    .occlusion_ratio
                    .iter()
                    .map(|&r| threshold_for_ratio(r, s.kernel_k, s.seed))
                    .collect::<Result<_, _>>()?,
            };
            MaskPolicy::Random {
                thetas,
                kernel: s.kernel_k,
            }
        }
    })
}

pub fn run(s: &TrainSettings) -> Result<RunRecord, CliError> {
    let data = required(&s.data, "data", "train")?;
    let cam_path = required(&s.camera, "camera", "train")?;
    let out = required(&s.out, "out", "train")?;
    let history_path = s.history.clone().unwrap_or_else(|| out.with_extension("history.csv"));
    let cam = camera(cam_path)?;

    let mut net_cfg = NetworkConfig::for_window(s.window, s.kernel_size, s.channels, s.gate_mode)?;
    net_cfg.batch_norm = s.batch_norm;
    net_cfg.gate_batch_norm = s.gate_batch_norm;
    net_cfg.dropout = s.dropout;
    net_cfg.seed = s.seed;

    let mut train_seqs = prepare(data, &cam, s.confidence_threshold)?;
    let mut val_seqs = match &s.val {
        Some(v) => Some(prepare(v, &cam, s.confidence_threshold)?),
        None => None,
    };
    let (mut net, resume) = if s.resume && out.exists() {
        let ck = load_checkpoint(out)?;
        if ck.net.config != net_cfg {
            return Err(CliError::data(format!(
                "{} was trained with a different network config",
                out.display()
            )));
        }
        log::info!("resuming from {} after epoch {}", out.display(), ck.state.as_ref().map_or(0, |st| st.epoch));
        (ck.net, ck.state)
    } else {
        let mut net = PoseLiftNet::new(net_cfg)?;
        if s.standardize {
            net.input_norm = InputNorm::fit(&train_seqs);
        }
        (net, None)
    };
    train_seqs.iter_mut().for_each(|q| q.standardize(&net.input_norm));
    if let Some(v) = &mut val_seqs {
        v.iter_mut().for_each(|q| q.standardize(&net.input_norm));
    }

    let set = make_training_windows(train_seqs, net.receptive_field(), mask_policy(s)?, s.fill)?;
    log::info!(
        "{} windows of {} frames, {} parameters, {:?}",
        set.len(),
        set.window,
        net.params.num_scalars(),
        s.gate_mode
    );
    let cfg = TrainConfig {
        epochs: s.epochs,
        batch_size: s.batch,
        lr: s.lr,
        lr_decay: s.lr_decay,
        seed: s.seed,
        bn_calibration_windows: s.bn_calibration_windows,
        ..Default::default()
    };
    let outcome = train(&mut net, &set, &cfg, val_seqs.as_deref(), Some(out), resume)?;
    let f = File::create(&history_path).map_err(|e| CliError::data(format!("{}: {e}", history_path.display())))?;
    write_history_csv(&outcome.history, BufWriter::new(f))?;

    let mut inputs = vec![data.to_path_buf(), cam_path.to_path_buf()];
    inputs.extend(s.val.clone());
    Ok(RunRecord {
        seed: Some(s.seed),
        inputs,
        outputs: vec![out.to_path_buf(), history_path],
    })
}
