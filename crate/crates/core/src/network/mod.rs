//! Temporal gated convolution network lifting 2D keypoint windows to the
//! root-relative 3D pose of the center frame.
//!
//! The stack is a first gated layer followed by skip blocks. Each block has a
//! dilated kernel-`k` gated convolution and a 1x1 gated convolution; the
//! feature stream carries a residual connection around the block while the
//! gate stream does not. A final 1x1 convolution regresses the non-root
//! joints, and three zero channels are prepended for the root.
//!
//! Two temporal geometries share the same weights:
//! * **center**: for a window of exactly the receptive field, every kernel-`k`
//!   convolution runs with stride `k` and dilation 1. Only the positions the
//!   center output depends on are computed. Used for training.
//! * **dense**: dilated valid convolutions over a whole sequence, one output
//!   per frame. Used for inference.
//!
//! With batch norm in evaluation mode both give the same center prediction.

mod checkpoint;
mod data;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError, TrainState};
pub use data::{make_training_windows, Batch, FillMode, InputNorm, MaskPolicy, PreparedSequence, Sample, TrainingSet};
pub use optim::{lr_at_epoch, AmsGrad, AmsGradConfig};
pub use train::{evaluate_mpjpe, evaluate_windows, read_history_csv, recalibrate_batch_norm, train, write_history_csv, EpochStats, TrainConfig, TrainError, TrainOutcome};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    AutodiffError, BnMode, ConvSpec, NodeId, ParamId, ParamStore, Parameter, RunningStats, Tape, Tensor3, BN_EPS,
    BN_MOMENTUM,
};
use crate::camera::Point3;
use crate::skeleton::N_JOINTS;

/// Network outputs are meters; predictions are reported in millimeters.
pub const OUTPUT_SCALE_MM: f64 = 1000.0;
/// Initial gate-stream bias, so gates start mostly open.
pub const GATE_BIAS_INIT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Gate computed from the previous layer's gate (mask stream).
    TwoStream,
    /// Gate computed from the previous layer's features.
    SingleStream,
    /// Ordinary convolution, no gate.
    Plain,
}

impl std::str::FromStr for GateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "two_stream" => Ok(GateMode::TwoStream),
            "single_stream" => Ok(GateMode::SingleStream),
            "plain" => Ok(GateMode::Plain),
            other => Err(format!("unknown gate mode {other:?} (expected two_stream, single_stream or plain)")),
        }
    }
}

impl GateMode {
    pub fn name(self) -> &'static str {
        match self {
            GateMode::TwoStream => "two_stream",
            GateMode::SingleStream => "single_stream",
            GateMode::Plain => "plain",
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NetworkError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("window of {got} frames does not match the receptive field {expected}")]
    Window { expected: usize, got: usize },
    #[error("input shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatedLayerConfig {
    pub in_ch: usize,
    /// Channels of the gate stream's input (two-stream mode only).
    pub gate_in_ch: usize,
    pub out_ch: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub gate_mode: GateMode,
    pub batch_norm: bool,
    pub gate_batch_norm: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct BnParams {
    gamma: ParamId,
    beta: ParamId,
    running: RunningStats,
}

#[derive(Clone, Debug, PartialEq)]
struct Stream {
    weight: ParamId,
    bias: Option<ParamId>,
    bn: Option<BnParams>,
}

/// One gated convolution with its parameters (held in a [`ParamStore`]) and
/// batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedLayer {
    pub config: GatedLayerConfig,
    feature: Stream,
    gate: Option<Stream>,
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
fn fan_in_uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

impl GatedLayer {
    fn make_stream(
        params: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        cfg: &GatedLayerConfig,
        bn: bool,
        bias_init: f64,
    ) -> Stream {
        let k = cfg.kernel_size;
        let fan_in = in_ch * k;
        let weight = params.add(Parameter::new(
            format!("{name}.weight"),
            vec![cfg.out_ch, in_ch, k],
            fan_in_uniform(rng, cfg.out_ch * fan_in, fan_in),
        ));
        if bn {
            let gamma = params.add(Parameter::new(format!("{name}.bn.gamma"), vec![cfg.out_ch], vec![1.0; cfg.out_ch]));
            let beta = params.add(Parameter::new(
                format!("{name}.bn.beta"),
                vec![cfg.out_ch],
                vec![bias_init; cfg.out_ch],
            ));
            Stream {
                weight,
                bias: None,
                bn: Some(BnParams {
                    gamma,
                    beta,
                    running: RunningStats::new(cfg.out_ch),
                }),
            }
        } else {
            let bias = params.add(Parameter::new(format!("{name}.bias"), vec![cfg.out_ch], vec![bias_init; cfg.out_ch]));
            Stream {
                weight,
                bias: Some(bias),
                bn: None,
            }
        }
    }

    pub fn new(params: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, config: GatedLayerConfig) -> Self {
        let feature = Self::make_stream(params, rng, &format!("{name}.f"), config.in_ch, &config, config.batch_norm, 0.0);
        let gate = match config.gate_mode {
            GateMode::Plain => None,
            GateMode::TwoStream => Some(Self::make_stream(
                params,
                rng,
                &format!("{name}.g"),
                config.gate_in_ch,
                &config,
                config.gate_batch_norm,
                GATE_BIAS_INIT,
            )),
            GateMode::SingleStream => Some(Self::make_stream(
                params,
                rng,
                &format!("{name}.g"),
                config.in_ch,
                &config,
                config.gate_batch_norm,
                GATE_BIAS_INIT,
            )),
        };
        Self { config, feature, gate }
    }

    /// Feature weight `W_f`, and the gate weight `W_g` if the layer is gated.
    pub fn weights(&self) -> (ParamId, Option<ParamId>) {
        (self.feature.weight, self.gate.as_ref().map(|g| g.weight))
    }

    /// Bias-like parameter of the gate stream: batch-norm beta, or the conv bias.
    pub fn gate_offset(&self) -> Option<ParamId> {
        self.gate.as_ref().map(|g| g.bn.as_ref().map_or_else(|| g.bias.expect("bias without bn"), |b| b.beta))
    }
}

fn stream_forward(
    s: &mut Stream,
    params: &ParamStore,
    tape: &mut Tape,
    input: NodeId,
    spec: ConvSpec,
    momentum: Option<f64>,
) -> Result<NodeId, AutodiffError> {
    let z = tape.conv1d(params, input, s.weight, s.bias, spec)?;
    match &mut s.bn {
        None => Ok(z),
        Some(bn) => {
            let mode = match momentum {
                Some(momentum) => BnMode::Train {
                    running: &mut bn.running,
                    momentum,
                },
                None => BnMode::Eval { running: &bn.running },
            };
            tape.batch_norm(params, z, bn.gamma, bn.beta, mode, BN_EPS)
        }
    }
}

/// One gated layer. Returns the layer output and the gate passed on to the
/// next layer.
///
/// * two-stream: `Y = relu(BN(x * W_f))`, `M = sigmoid(BN(m * W_g))`, `x' = Y . M`
/// * single-stream: as above but `M = sigmoid(BN(x * W_g))`
/// * plain: `x' = relu(BN(x * W_f))`, `m` returned unchanged
pub fn gated_conv_forward(
    layer: &mut GatedLayer,
    params: &ParamStore,
    tape: &mut Tape,
    x_prev: NodeId,
    m_prev: NodeId,
    spec: ConvSpec,
    train: bool,
) -> Result<(NodeId, NodeId), AutodiffError> {
    gated_forward(layer, params, tape, x_prev, m_prev, spec, train.then_some(BN_MOMENTUM))
}

fn gated_forward(
    layer: &mut GatedLayer,
    params: &ParamStore,
    tape: &mut Tape,
    x_prev: NodeId,
    m_prev: NodeId,
    spec: ConvSpec,
    momentum: Option<f64>,
) -> Result<(NodeId, NodeId), AutodiffError> {
    let (xd, md) = (tape.value(x_prev).dims(), tape.value(m_prev).dims());
    if layer.config.gate_mode == GateMode::TwoStream && (xd[0] != md[0] || xd[2] != md[2]) {
        return Err(AutodiffError::Dimension(format!(
            "feature input {xd:?} and mask input {md:?} differ in batch or time"
        )));
    }
    let pre = stream_forward(&mut layer.feature, params, tape, x_prev, spec, momentum)?;
    let y = tape.relu(pre);
    match (layer.config.gate_mode, layer.gate.as_mut()) {
        (GateMode::Plain, _) | (_, None) => Ok((y, m_prev)),
        (mode, Some(g)) => {
            let gate_in = if mode == GateMode::TwoStream { m_prev } else { x_prev };
            let gpre = stream_forward(g, params, tape, gate_in, spec, momentum)?;
            let m = tape.sigmoid(gpre);
            let x = tape.hadamard(y, m)?;
            Ok((x, m))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_joints: usize,
    /// Input window; must equal the receptive field.
    pub window: usize,
    pub channels: usize,
    pub n_skip_blocks: usize,
    pub kernel_size: usize,
    /// Dilation of the first layer followed by one per skip block.
    pub dilations: Vec<usize>,
    pub gate_mode: GateMode,
    /// Batch norm on the feature stream.
    pub batch_norm: bool,
    /// Batch norm on the gate stream before the sigmoid.
    pub gate_batch_norm: bool,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_joints: N_JOINTS,
            window: 243,
            channels: 1024,
            n_skip_blocks: 4,
            kernel_size: 3,
            dilations: vec![1, 3, 9, 27, 81],
            gate_mode: GateMode::TwoStream,
            batch_norm: true,
            gate_batch_norm: true,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Config with `n_skip_blocks` blocks and dilations `k^l`.
    pub fn with_blocks(n_skip_blocks: usize, kernel_size: usize, channels: usize, gate_mode: GateMode) -> Self {
        let dilations: Vec<usize> = (0..=n_skip_blocks as u32).map(|l| kernel_size.pow(l)).collect();
        let window = 1 + dilations.iter().map(|d| (kernel_size - 1) * d).sum::<usize>();
        Self {
            window,
            channels,
            n_skip_blocks,
            kernel_size,
            dilations,
            gate_mode,
            ..Default::default()
        }
    }

    /// Config whose receptive field is `window`, which must be a power
    /// `k^(b+1)` of the kernel size with `b >= 1` blocks.
    pub fn for_window(window: usize, kernel_size: usize, channels: usize, gate_mode: GateMode) -> Result<Self, NetworkError> {
        if kernel_size < 3 || kernel_size.is_multiple_of(2) {
            return Err(NetworkError::Config(format!("kernel size must be odd and at least 3, got {kernel_size}")));
        }
        let mut blocks = 1;
        while Self::with_blocks(blocks, kernel_size, channels, gate_mode).window < window {
            blocks += 1;
        }
        let cfg = Self::with_blocks(blocks, kernel_size, channels, gate_mode);
        if cfg.window != window {
            return Err(NetworkError::Config(format!(
                "window {window} is not a receptive field of kernel {kernel_size} (nearest is {})",
                cfg.window
            )));
        }
        Ok(cfg)
    }

    pub fn receptive_field(&self) -> usize {
        1 + self.dilations.iter().map(|d| (self.kernel_size - 1) * d).sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: String| Err(NetworkError::Config(m));
        if self.n_joints < 2 || self.channels == 0 {
            return bad("need at least two joints and one channel".into());
        }
        if self.kernel_size < 2 || self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel size must be odd and at least 3, got {}", self.kernel_size));
        }
        if self.dilations.len() != self.n_skip_blocks + 1 {
            return bad(format!(
                "{} dilations given for {} skip blocks (need one more for the first layer)",
                self.dilations.len(),
                self.n_skip_blocks
            ));
        }
        for (l, &d) in self.dilations.iter().enumerate() {
            if d != self.kernel_size.pow(l as u32) {
                return bad(format!(
                    "dilation {l} is {d}; the strided training geometry needs kernel_size^{l} = {}",
                    self.kernel_size.pow(l as u32)
                ));
            }
        }
        if self.window != self.receptive_field() {
            return bad(format!(
                "window {} differs from the receptive field {}",
                self.window,
                self.receptive_field()
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Input channels of the first layer's feature and gate streams.
    pub fn input_channels(&self) -> (usize, usize) {
        let c = 2 * self.n_joints;
        match self.gate_mode {
            GateMode::TwoStream => (c, c),
            GateMode::SingleStream => (2 * c, 2 * c),
            GateMode::Plain => (c, 0),
        }
    }
}

/// Which temporal geometry a forward pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometry {
    Center,
    Dense,
}

/// The lifting network: architecture, parameters and batch-norm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseLiftNet {
    pub config: NetworkConfig,
    pub params: ParamStore,
    pub layers: Vec<GatedLayer>,
    /// Standardization the input sequences were prepared with.
    pub input_norm: InputNorm,
    final_weight: ParamId,
    final_bias: ParamId,
}

/// Everything except the parameter values; cloned into closures that need
/// to run forward passes against a separate parameter store.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub config: NetworkConfig,
    pub layers: Vec<GatedLayer>,
    /// Running-statistics momentum used by training-mode passes.
    pub bn_momentum: f64,
    final_weight: ParamId,
    final_bias: ParamId,
}

impl PoseLiftNet {
    pub fn new(config: NetworkConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let (in_f, in_g) = config.input_channels();
        let (k, c) = (config.kernel_size, config.channels);
        let layer_cfg = |in_ch: usize, gate_in_ch: usize, kernel: usize, dilation: usize| GatedLayerConfig {
            in_ch,
            gate_in_ch,
            out_ch: c,
            kernel_size: kernel,
            dilation,
            gate_mode: config.gate_mode,
            batch_norm: config.batch_norm,
            gate_batch_norm: config.gate_batch_norm,
        };
        let mut layers = vec![GatedLayer::new(&mut params, &mut rng, "expand", layer_cfg(in_f, in_g, k, 1))];
        for b in 0..config.n_skip_blocks {
            let d = config.dilations[b + 1];
            layers.push(GatedLayer::new(&mut params, &mut rng, &format!("block{b}.dilated"), layer_cfg(c, c, k, d)));
            layers.push(GatedLayer::new(&mut params, &mut rng, &format!("block{b}.pointwise"), layer_cfg(c, c, 1, 1)));
        }
        let out = 3 * (config.n_joints - 1);
        let final_weight = params.add(Parameter::new(
            "shrink.weight",
            vec![out, c, 1],
            fan_in_uniform(&mut rng, out * c, c),
        ));
        let final_bias = params.add(Parameter::new("shrink.bias", vec![out], vec![0.0; out]));
        Ok(Self {
            input_norm: InputNorm::identity(config.n_joints),
            config,
            params,
            layers,
            final_weight,
            final_bias,
        })
    }

    pub fn receptive_field(&self) -> usize {
        self.config.receptive_field()
    }

    pub fn final_layer(&self) -> (ParamId, ParamId) {
        (self.final_weight, self.final_bias)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            config: self.config.clone(),
            layers: self.layers.clone(),
            bn_momentum: BN_MOMENTUM,
            final_weight: self.final_weight,
            final_bias: self.final_bias,
        }
    }

    /// Copies batch-norm statistics back from an architecture used for training.
    pub fn set_architecture(&mut self, arch: Architecture) {
        self.layers = arch.layers;
    }

    /// Running statistics of every batch-norm layer, in layer order
    /// (feature stream first, then gate stream).
    pub fn running_stats(&self) -> Vec<&RunningStats> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Some(bn) = &l.feature.bn {
                out.push(&bn.running);
            }
            if let Some(bn) = l.gate.as_ref().and_then(|g| g.bn.as_ref()) {
                out.push(&bn.running);
            }
        }
        out
    }

    pub fn running_stats_mut(&mut self) -> Vec<&mut RunningStats> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            if let Some(bn) = &mut l.feature.bn {
                out.push(&mut bn.running);
            }
            if let Some(bn) = l.gate.as_mut().and_then(|g| g.bn.as_mut()) {
                out.push(&mut bn.running);
            }
        }
        out
    }

    /// Forward pass recording onto `tape`; see [`Architecture::forward`].
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: Tensor3,
        m: Tensor3,
        geometry: Geometry,
        train: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, NetworkError> {
        let mut arch = self.architecture();
        let out = arch.forward(&self.params, tape, x, m, geometry, train, rng)?;
        self.layers = arch.layers;
        Ok(out)
    }

    /// Center-frame prediction for each window of a batch, millimeters.
    ///
    /// `x` and `m` are `[batch, 2 N, T]` with `T` the receptive field
    /// (valid mode), or any `T >= 1` when `replicate` is set, in which case the
    /// window is edge-padded around its center frame.
    pub fn network_forward(&mut self, x: &Tensor3, m: &Tensor3, replicate: bool) -> Result<Vec<Vec<f64>>, NetworkError> {
        let rf = self.receptive_field();
        let t = x.time();
        let (x, m) = if t == rf {
            (x.clone(), m.clone())
        } else if replicate && t >= 1 {
            let c = (t - 1) / 2;
            let half = rf / 2;
            let idx: Vec<usize> = (0..rf)
                .map(|i| (c as isize + i as isize - half as isize).clamp(0, t as isize - 1) as usize)
                .collect();
            (gather_time(x, &idx), gather_time(m, &idx))
        } else {
            return Err(NetworkError::Window { expected: rf, got: t });
        };
        let mut tape = Tape::new();
        let (xi, mi) = self.config_inputs(x, m)?;
        let out = self.forward(&mut tape, xi, mi, Geometry::Center, false, None)?;
        Ok(split_batch(tape.value(out)))
    }

    /// Builds the first layer's feature and gate inputs from coordinate and
    /// mask tensors, according to the gate mode.
    pub fn config_inputs(&self, x: Tensor3, m: Tensor3) -> Result<(Tensor3, Tensor3), NetworkError> {
        if x.dims() != m.dims() || x.channels() != 2 * self.config.n_joints {
            return Err(NetworkError::Shape(format!(
                "coordinates {:?} and mask {:?} must both be [batch, {}, T]",
                x.dims(),
                m.dims(),
                2 * self.config.n_joints
            )));
        }
        Ok(match self.config.gate_mode {
            GateMode::TwoStream | GateMode::Plain => (x, m),
            GateMode::SingleStream => {
                let joined = concat_channels(&x, &m);
                (joined.clone(), joined)
            }
        })
    }

    /// One root-relative pose (millimeters) per input frame. Coordinates are
    /// `2 N` normalized rows, the mask `N x T` joint rows (true = occluded).
    /// Occluded coordinates must already be zeroed or filled.
    pub fn predict_sequence(&mut self, coords: &[Vec<f64>], mask: &crate::mask::OcclusionMask) -> Result<Vec<Vec<Point3>>, NetworkError> {
        let n = self.config.n_joints;
        let len = mask.n_frames();
        if coords.len() != 2 * n || coords.iter().any(|r| r.len() != len) || mask.n_joints() != n {
            return Err(NetworkError::Shape(format!(
                "expected {} coordinate rows and an {n}-joint mask of {len} frames",
                2 * n
            )));
        }
        if len == 0 {
            return Ok(Vec::new());
        }
        let half = self.receptive_field() / 2;
        const CHUNK: usize = 2048;
        let mut poses = Vec::with_capacity(len);
        let mut start = 0;
        while start < len {
            let out_len = CHUNK.min(len - start);
            let idx: Vec<usize> = (0..out_len + 2 * half)
                .map(|i| (start as isize + i as isize - half as isize).clamp(0, len as isize - 1) as usize)
                .collect();
            let x: Vec<f64> = (0..2 * n).flat_map(|r| idx.iter().map(move |&t| coords[r][t])).collect();
            let m: Vec<f64> = (0..2 * n)
                .flat_map(|r| idx.iter().map(move |&t| if mask.is_occluded(r / 2, t) { 1.0 } else { 0.0 }))
                .collect();
            let dims = [1, 2 * n, idx.len()];
            let (xi, mi) = self.config_inputs(Tensor3::from_vec(dims, x)?, Tensor3::from_vec(dims, m)?)?;
            let mut tape = Tape::new();
            let out = self.forward(&mut tape, xi, mi, Geometry::Dense, false, None)?;
            let v = tape.value(out);
            for t in 0..v.time() {
                poses.push((0..n).map(|j| Point3::new(v.at(0, 3 * j, t), v.at(0, 3 * j + 1, t), v.at(0, 3 * j + 2, t)) * OUTPUT_SCALE_MM).collect());
            }
            start += out_len;
        }
        Ok(poses)
    }
}

impl Architecture {
    /// Records the forward pass. Output is `[batch, 3 N, T_out]` in meters with
    /// the root channels fixed at zero; `T_out` is 1 in center geometry and
    /// `T - receptive_field + 1` in dense geometry.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &mut self,
        params: &ParamStore,
        tape: &mut Tape,
        x: Tensor3,
        m: Tensor3,
        geometry: Geometry,
        train: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, NetworkError> {
        let rf = self.config.receptive_field();
        if geometry == Geometry::Center && x.time() != rf {
            return Err(NetworkError::Window { expected: rf, got: x.time() });
        }
        if x.time() < rf {
            return Err(NetworkError::Window { expected: rf, got: x.time() });
        }
        let k = self.config.kernel_size;
        let dropout = self.config.dropout;
        let momentum = train.then_some(self.bn_momentum);
        let xin = tape.input(x);
        let min = tape.input(m);
        let spec_for = |kernel: usize, dilation: usize| match (geometry, kernel) {
            (_, 1) => ConvSpec::valid(1),
            (Geometry::Center, _) => ConvSpec::strided(kernel),
            (Geometry::Dense, _) => ConvSpec::valid(dilation),
        };
        let mut apply_dropout = |tape: &mut Tape, node: NodeId| match (&mut rng, train && dropout > 0.0) {
            (Some(r), true) => tape.dropout(node, dropout, *r),
            _ => node,
        };
        let (first, rest) = self.layers.split_first_mut().expect("at least one layer");
        let (mut xs, mut ms) = gated_forward(first, params, tape, xin, min, spec_for(k, 1), momentum)?;
        xs = apply_dropout(tape, xs);
        for (b, pair) in rest.chunks_mut(2).enumerate() {
            let d = self.config.dilations[b + 1];
            let [dilated, pointwise] = pair else {
                unreachable!("blocks come in pairs")
            };
            let (x1, m1) = gated_forward(dilated, params, tape, xs, ms, spec_for(k, d), momentum)?;
            let x1 = apply_dropout(tape, x1);
            let (x2, m2) = gated_forward(pointwise, params, tape, x1, m1, ConvSpec::valid(1), momentum)?;
            let x2 = apply_dropout(tape, x2);
            let t_out = tape.value(x2).time();
            let res = match geometry {
                Geometry::Center => tape.slice_time(xs, k / 2, k, t_out)?,
                Geometry::Dense => tape.slice_time(xs, (k - 1) * d / 2, 1, t_out)?,
            };
            xs = tape.add(res, x2)?;
            ms = m2;
        }
        let out = tape.conv1d(params, xs, self.final_weight, Some(self.final_bias), ConvSpec::valid(1))?;
        Ok(tape.pad_channels(out, 3))
    }
}

fn gather_time(x: &Tensor3, idx: &[usize]) -> Tensor3 {
    let [b, c, _] = x.dims();
    let mut out = Tensor3::zeros(b, c, idx.len());
    for bi in 0..b {
        for ci in 0..c {
            let row = x.row(bi, ci);
            for (t, &s) in idx.iter().enumerate() {
                out.set(bi, ci, t, row[s]);
            }
        }
    }
    out
}

fn concat_channels(a: &Tensor3, b: &Tensor3) -> Tensor3 {
    let [n, ca, t] = a.dims();
    let cb = b.channels();
    let mut data = Vec::with_capacity(n * (ca + cb) * t);
    for bi in 0..n {
        for c in 0..ca {
            data.extend_from_slice(a.row(bi, c));
        }
        for c in 0..cb {
            data.extend_from_slice(b.row(bi, c));
        }
    }
    Tensor3::from_vec([n, ca + cb, t], data).expect("sizes add up")
}

/// `[batch, 3 N, 1]` in meters to one `3 N` vector per batch entry in millimeters.
fn split_batch(v: &Tensor3) -> Vec<Vec<f64>> {
    (0..v.batch())
        .map(|b| (0..v.channels()).map(|c| v.at(b, c, 0) * OUTPUT_SCALE_MM).collect())
        .collect()
}

/// Draws a uniformly random element; used for per-sample mask ratios.
pub(crate) fn pick<'a, T, R: Rng + ?Sized>(rng: &mut R, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}
