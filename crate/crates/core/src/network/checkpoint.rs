//! Binary checkpoint container.
//!
//! Layout (little endian):
//! `magic[8] | version u32 | meta_len u64 | meta JSON | f64 payload`.
//! The payload holds, in order, every parameter's values, then (if training
//! state is present) the optimizer's `m`, `v` and `v_max` per parameter, then
//! every batch-norm layer's running mean and variance. Array sizes follow from
//! the network config recorded in the metadata, which is checked on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::InputNorm;
use super::optim::{AmsGrad, AmsGradConfig};
use super::train::{EpochStats, TrainConfig};
use super::{NetworkConfig, NetworkError, PoseLiftNet};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"GPOSECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Optimizer progress saved alongside the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub train_config: TrainConfig,
    pub optimizer: AmsGrad,
    pub history: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: PoseLiftNet,
    pub state: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    epoch: usize,
    train_config: TrainConfig,
    optimizer: AmsGradConfig,
    step: u64,
    history: Vec<EpochStats>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    network: NetworkConfig,
    input_norm: InputNorm,
    params: Vec<ParamMeta>,
    batch_norm_channels: Vec<usize>,
    state: Option<StateMeta>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_checkpoint<W: Write>(ck: &Checkpoint, mut w: W) -> std::io::Result<()> {
    let net = &ck.net;
    let meta = Meta {
        network: net.config.clone(),
        input_norm: net.input_norm.clone(),
        params: net
            .params
            .iter()
            .map(|(_, p)| ParamMeta {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
        batch_norm_channels: net.running_stats().iter().map(|s| s.mean.len()).collect(),
        state: ck.state.as_ref().map(|s| StateMeta {
            epoch: s.epoch,
            train_config: s.train_config.clone(),
            optimizer: s.optimizer.config,
            step: s.optimizer.step,
            history: s.history.clone(),
        }),
    };
    let json = serde_json::to_vec(&meta).map_err(std::io::Error::other)?;
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut put = |vals: &[f64]| -> std::io::Result<()> {
        for v in vals {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    for (_, p) in net.params.iter() {
        put(&p.value)?;
    }
    if let Some(s) = &ck.state {
        for arrays in [&s.optimizer.m, &s.optimizer.v, &s.optimizer.v_max] {
            for a in arrays.iter() {
                put(a)?;
            }
        }
    }
    for stats in net.running_stats() {
        put(&stats.mean)?;
        put(&stats.var)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, out: &mut [f64]) -> Result<(), CheckpointError> {
    let mut buf = [0u8; 8];
    for v in out.iter_mut() {
        r.read_exact(&mut buf)
            .map_err(|_| CheckpointError::Corrupt("payload shorter than the metadata implies".into()))?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, CheckpointError> {
    let truncated = |_| CheckpointError::Corrupt("truncated header".into());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::Magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Magic);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(truncated)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(truncated)?;
    let meta_len = u64::from_le_bytes(b8);
    if meta_len > 1 << 30 {
        return Err(CheckpointError::Corrupt(format!("metadata length {meta_len}")));
    }
    let mut json = vec![0u8; meta_len as usize];
    r.read_exact(&mut json).map_err(truncated)?;
    let meta: Meta = serde_json::from_slice(&json).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let mut net = PoseLiftNet::new(meta.network)?;
    if meta.input_norm.mean.len() != 2 * net.config.n_joints || meta.input_norm.std.len() != 2 * net.config.n_joints {
        return Err(CheckpointError::Corrupt("input normalization has the wrong size".into()));
    }
    net.input_norm = meta.input_norm;
    let layout: Vec<(String, Vec<usize>)> = net.params.iter().map(|(_, p)| (p.name.clone(), p.shape.clone())).collect();
    let stored: Vec<(String, Vec<usize>)> = meta.params.into_iter().map(|p| (p.name, p.shape)).collect();
    if layout != stored {
        return Err(CheckpointError::Corrupt("parameter list does not match the network config".into()));
    }
    let bn: Vec<usize> = net.running_stats().iter().map(|s| s.mean.len()).collect();
    if bn != meta.batch_norm_channels {
        return Err(CheckpointError::Corrupt("batch-norm layers do not match the network config".into()));
    }
    for p in net.params.iter_mut() {
        read_f64s(&mut r, &mut p.value)?;
    }
    let state = match meta.state {
        None => None,
        Some(s) => {
            let mut optimizer = AmsGrad::new(&net.params, s.optimizer);
            optimizer.step = s.step;
            for arrays in [&mut optimizer.m, &mut optimizer.v, &mut optimizer.v_max] {
                for a in arrays.iter_mut() {
                    read_f64s(&mut r, a)?;
                }
            }
            Some(TrainState {
                epoch: s.epoch,
                train_config: s.train_config,
                optimizer,
                history: s.history,
            })
        }
    };
    for stats in net.running_stats_mut() {
        read_f64s(&mut r, &mut stats.mean)?;
        read_f64s(&mut r, &mut stats.var)?;
    }
    if r.read(&mut [0u8; 1]).map_err(|e| CheckpointError::Corrupt(e.to_string()))? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes after payload".into()));
    }
    Ok(Checkpoint { net, state })
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let f = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(f);
        write_checkpoint(ck, &mut w).map_err(io_err(&tmp))?;
        w.flush().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_checkpoint(BufReader::new(f))
}
