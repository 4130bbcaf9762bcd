//! Mini-batch training loop under AMSGrad with per-epoch learning-rate decay.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, Checkpoint, CheckpointError, TrainState};
use super::data::{FillMode, PreparedSequence, TrainingSet};
use super::optim::{lr_at_epoch, AmsGrad, AmsGradConfig};
use super::{Geometry, NetworkError, PoseLiftNet, OUTPUT_SCALE_MM};
use crate::autodiff::{AutodiffError, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-epoch multiplicative decay of the learning rate.
    pub lr_decay: f64,
    pub optimizer: AmsGradConfig,
    pub seed: u64,
    /// Windows used to re-estimate batch-norm statistics after each epoch
    /// (0 keeps the momentum estimates).
    pub bn_calibration_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 1024,
            lr: 0.001,
            lr_decay: 0.95,
            optimizer: AmsGradConfig::default(),
            seed: 0,
            bn_calibration_windows: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} and decay {} must be finite, lr >= 0, decay > 0",
                self.lr, self.lr_decay
            )));
        }
        Ok(())
    }
}

/// One row of the loss history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sample loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean per-joint error on the validation set, millimeters.
    pub val_mpjpe: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training set has no windows")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (lr {lr}); lower the learning rate or check the inputs")]
    NonFinite { epoch: usize, batch: usize, loss: f64, lr: f64 },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Network(e.into())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub state: TrainState,
}

/// Trains `net` in place. A checkpoint is written after every epoch when
/// `checkpoint` is given. `resume` continues from a saved state.
pub fn train(
    net: &mut PoseLiftNet,
    set: &TrainingSet,
    cfg: &TrainConfig,
    validation: Option<&[PreparedSequence]>,
    checkpoint: Option<&Path>,
    resume: Option<TrainState>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if set.window != net.receptive_field() || set.n_joints() != net.config.n_joints {
        return Err(NetworkError::Window {
            expected: net.receptive_field(),
            got: set.window,
        }
        .into());
    }
    let mut state = resume.unwrap_or_else(|| TrainState {
        epoch: 0,
        train_config: cfg.clone(),
        optimizer: AmsGrad::new(&net.params, cfg.optimizer),
        history: Vec::new(),
    });
    let n_joints = net.config.n_joints;
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in state.epoch..cfg.epochs {
        let lr = lr_at_epoch(cfg.lr, cfg.lr_decay, epoch);
        let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle.set_stream(2 * epoch as u64);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        dropout_rng.set_stream(2 * epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut shuffle);

        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            // a single-sample batch has degenerate batch statistics
            if idx.len() < 2 && set.len() > 1 {
                continue;
            }
            let batch = set.batch(idx, cfg.seed, epoch);
            let (x, m) = net.config_inputs(batch.x, batch.m)?;
            let mut tape = Tape::new();
            let pred = net.forward(&mut tape, x, m, Geometry::Center, true, Some(&mut dropout_rng))?;
            let loss = tape.mse_loss(pred, &batch.target, n_joints)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b, loss: value, lr });
            }
            net.params.zero_grad();
            tape.backward(loss, &mut net.params)?;
            state.optimizer.step(&mut net.params, lr);
            loss_sum += value * idx.len() as f64;
            seen += idx.len();
        }
        if cfg.bn_calibration_windows > 0 {
            recalibrate_batch_norm(net, set, cfg.bn_calibration_windows, cfg.batch_size, cfg.seed, epoch)?;
        }
        let val_mpjpe = match validation {
            Some(v) => Some(evaluate_mpjpe(net, v, set.fill)?),
            None => None,
        };
        let stats = EpochStats {
            epoch,
            lr,
            train_loss: if seen > 0 { loss_sum / seen as f64 } else { 0.0 },
            val_mpjpe,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e}, loss {:.6e}{}",
            stats.train_loss,
            val_mpjpe.map_or(String::new(), |v| format!(", val MPJPE {v:.2} mm"))
        );
        state.history.push(stats);
        state.epoch = epoch + 1;
        if let Some(path) = checkpoint {
            save_checkpoint(
                path,
                &Checkpoint {
                    net: net.clone(),
                    state: Some(state.clone()),
                },
            )?;
        }
    }
    net.params.zero_grad();
    Ok(TrainOutcome {
        history: state.history.clone(),
        state,
    })
}

/// Replaces the running batch-norm statistics with averages over up to
/// `max_windows` evenly spaced training windows, in shuffled batches, under the current weights.
///
/// Momentum estimates lag behind the weights; for channels that are nearly
/// constant over a batch (a gate stream fed an all-visible mask) the lag is
/// divided by `sqrt(eps)` at evaluation time.
pub fn recalibrate_batch_norm(
    net: &mut PoseLiftNet,
    set: &TrainingSet,
    max_windows: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<(), NetworkError> {
    let n = set.len();
    let take = max_windows.min(n);
    if take == 0 {
        return Ok(());
    }
    let mut indices: Vec<usize> = (0..take).map(|i| i * n / take).collect();
    // batches must be mixed like training batches, or within-batch variance
    // underestimates the population variance
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - epoch as u64);
    indices.shuffle(&mut rng);
    let mut arch = net.architecture();
    let chunks: Vec<&[usize]> = indices.chunks(batch_size.max(2)).filter(|c| c.len() > 1 || take == 1).collect();
    for (k, idx) in chunks.into_iter().enumerate() {
        let batch = set.batch(idx, seed, epoch);
        let (x, m) = net.config_inputs(batch.x, batch.m)?;
        arch.bn_momentum = 1.0 / (k + 1) as f64;
        let mut tape = Tape::new();
        arch.forward(&net.params, &mut tape, x, m, Geometry::Center, true, None)?;
    }
    net.set_architecture(arch);
    Ok(())
}

/// Mean per-joint root-relative error (mm, no alignment) over every frame,
/// predicting with each sequence's own mask.
pub fn evaluate_mpjpe(net: &mut PoseLiftNet, seqs: &[PreparedSequence], fill: FillMode) -> Result<f64, NetworkError> {
    let (mut sum, mut count) = (0.0, 0usize);
    for seq in seqs {
        let Some(target) = &seq.target else {
            return Err(NetworkError::Shape(format!("person {} has no 3D ground truth", seq.person)));
        };
        let coords = seq.filled_coords(&seq.mask, fill);
        let pred = net.predict_sequence(&coords, &seq.mask)?;
        for (pose, gt) in pred.iter().zip(target) {
            for (j, p) in pose.iter().enumerate() {
                let g = &gt[3 * j..3 * j + 3];
                let d = [p.x - g[0] * OUTPUT_SCALE_MM, p.y - g[1] * OUTPUT_SCALE_MM, p.z - g[2] * OUTPUT_SCALE_MM];
                sum += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(NetworkError::Shape("no frames to evaluate".into()));
    }
    Ok(sum / count as f64)
}

/// Mean per-joint error (mm) of the center frames of every training window,
/// evaluated with the masks the windows get in `epoch`.
pub fn evaluate_windows(net: &mut PoseLiftNet, set: &TrainingSet, seed: u64, epoch: usize) -> Result<f64, NetworkError> {
    let (mut sum, mut count) = (0.0, 0usize);
    let indices: Vec<usize> = (0..set.len()).collect();
    for idx in indices.chunks(256) {
        let batch = set.batch(idx, seed, epoch);
        let (x, m) = net.config_inputs(batch.x, batch.m)?;
        let mut tape = Tape::new();
        let pred = net.forward(&mut tape, x, m, Geometry::Center, false, None)?;
        let out = tape.value(pred).data();
        for (p, g) in out.chunks(3).zip(batch.target.chunks(3)) {
            let d: f64 = p.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum();
            sum += d.sqrt() * OUTPUT_SCALE_MM;
            count += 1;
        }
    }
    if count == 0 {
        return Err(NetworkError::Shape("no windows to evaluate".into()));
    }
    Ok(sum / count as f64)
}

/// Loss history as CSV: `epoch,lr,train_loss,val_mpjpe` (empty when absent).
pub fn write_history_csv<W: Write>(history: &[EpochStats], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for row in history {
        wr.serialize(row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_history_csv<R: std::io::Read>(r: R) -> Result<Vec<EpochStats>, csv::Error> {
    csv::Reader::from_reader(r).deserialize().collect()
}
