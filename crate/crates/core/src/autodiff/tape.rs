//! Define-by-run tape. Each forward pass records its operations in order;
//! [`Tape::backward`] replays them in reverse and accumulates parameter
//! gradients into the [`ParamStore`].

use rand::Rng;

use super::gemm::gemm;
use super::{AutodiffError, ParamId, ParamStore, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding; the output is shorter than the input.
    Valid,
    /// Edges padded by repeating the boundary frames; output keeps the input length
    /// when `stride == 1`.
    Replicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub dilation: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn valid(dilation: usize) -> Self {
        Self {
            dilation,
            stride: 1,
            padding: Padding::Valid,
        }
    }

    pub fn replicate(dilation: usize) -> Self {
        Self {
            dilation,
            stride: 1,
            padding: Padding::Replicate,
        }
    }

    pub fn strided(stride: usize) -> Self {
        Self {
            dilation: 1,
            stride,
            padding: Padding::Valid,
        }
    }
}

/// Resolved temporal geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    dilation: usize,
    stride: usize,
    time_in: usize,
    time_out: usize,
    left_pad: usize,
    replicate: bool,
}

impl ConvGeom {
    fn new(kernel: usize, spec: ConvSpec, time_in: usize) -> Result<Self, AutodiffError> {
        if kernel == 0 || spec.dilation == 0 || spec.stride == 0 {
            return Err(AutodiffError::Dimension(
                "kernel, dilation and stride must be positive".into(),
            ));
        }
        let span = (kernel - 1) * spec.dilation + 1;
        let (padded, left_pad, replicate) = match spec.padding {
            Padding::Valid => (time_in, 0, false),
            Padding::Replicate => {
                if time_in == 0 {
                    return Err(AutodiffError::Window { needed: 1, got: 0 });
                }
                let total = (kernel - 1) * spec.dilation;
                (time_in + total, total / 2, true)
            }
        };
        if padded < span {
            return Err(AutodiffError::Window {
                needed: span,
                got: time_in,
            });
        }
        Ok(Self {
            dilation: spec.dilation,
            stride: spec.stride,
            time_in,
            time_out: (padded - span) / spec.stride + 1,
            left_pad,
            replicate,
        })
    }

    #[inline]
    fn source(&self, t: usize, j: usize) -> usize {
        let p = t * self.stride + j * self.dilation;
        if self.replicate {
            (p as isize - self.left_pad as isize).clamp(0, self.time_in as isize - 1) as usize
        } else {
            p
        }
    }
}

/// Running mean/variance of a batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub enum BnMode<'a> {
    /// Normalize with batch statistics and fold them into `running`.
    Train {
        running: &'a mut RunningStats,
        momentum: f64,
    },
    /// Normalize with stored running statistics.
    Eval { running: &'a RunningStats },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

enum Op {
    Input,
    Param(ParamId),
    Conv {
        input: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    BatchNorm {
        input: NodeId,
        gamma: ParamId,
        beta: ParamId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Mul(NodeId, NodeId),
    Add(NodeId, NodeId),
    SliceTime {
        input: NodeId,
        start: usize,
        step: usize,
    },
    PadChannels {
        input: NodeId,
        front: usize,
    },
    Dropout {
        input: NodeId,
        scale: Vec<f64>,
    },
    Sum(NodeId),
    Mse {
        pred: NodeId,
        target: Vec<f64>,
        n_joints: usize,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Param(_) => vec![],
            Op::Conv { input, .. }
            | Op::BatchNorm { input, .. }
            | Op::SliceTime { input, .. }
            | Op::PadChannels { input, .. }
            | Op::Dropout { input, .. } => vec![*input],
            Op::Relu(a) | Op::Sigmoid(a) | Op::Sum(a) => vec![*a],
            Op::Mse { pred, .. } => vec![*pred],
            Op::Mul(a, b) | Op::Add(a, b) => vec![*a, *b],
        }
    }
}

struct Node {
    value: Tensor3,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor3 {
        &self.nodes[id.0].value
    }

    /// Inputs of every recorded node, in recording order.
    pub fn edges(&self) -> Vec<(NodeId, Vec<NodeId>)> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (NodeId(i), n.op.inputs()))
            .collect()
    }

    fn push(&mut self, value: Tensor3, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Records a constant input.
    pub fn input(&mut self, value: Tensor3) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Exposes a parameter as a `[1, 1, len]` node.
    pub fn param(&mut self, params: &ParamStore, id: ParamId) -> NodeId {
        let p = params.get(id);
        let value = Tensor3::from_vec([1, 1, p.len()], p.value.clone()).expect("length matches");
        self.push(value, Op::Param(id), p.requires_grad)
    }

    /// Dilated 1-D convolution over time. `weight` has shape `[out_ch, in_ch, k]`.
    pub fn conv1d(
        &mut self,
        params: &ParamStore,
        input: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
        spec: ConvSpec,
    ) -> Result<NodeId, AutodiffError> {
        let w = params.get(weight);
        if w.shape.len() != 3 {
            return Err(AutodiffError::Dimension(format!(
                "conv weight `{}` must be 3-D, got {:?}",
                w.name, w.shape
            )));
        }
        let (out_ch, in_ch, kernel) = (w.shape[0], w.shape[1], w.shape[2]);
        let x = self.value(input);
        if x.channels() != in_ch {
            return Err(AutodiffError::Dimension(format!(
                "conv `{}` expects {in_ch} input channels, got {}",
                w.name,
                x.channels()
            )));
        }
        if let Some(b) = bias {
            if params.get(b).len() != out_ch {
                return Err(AutodiffError::Dimension(format!(
                    "bias `{}` must have {out_ch} entries",
                    params.get(b).name
                )));
            }
        }
        let geom = ConvGeom::new(kernel, spec, x.time())?;
        let batch = x.batch();
        let rows = batch * geom.time_out;
        let ik = in_ch * kernel;

        let mut cols = vec![0.0; rows * ik];
        for b in 0..batch {
            for i in 0..in_ch {
                let src = x.row(b, i);
                for t in 0..geom.time_out {
                    let dst = &mut cols[(b * geom.time_out + t) * ik + i * kernel..][..kernel];
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d = src[geom.source(t, j)];
                    }
                }
            }
        }

        let mut out_bt = vec![0.0; rows * out_ch];
        gemm(
            rows, ik, out_ch, &cols, (ik, 1), &w.value, (1, ik), 0.0, &mut out_bt, (out_ch, 1),
        );
        let mut out = Tensor3::zeros(batch, out_ch, geom.time_out);
        let bias_vals = bias.map(|b| &params.get(b).value);
        {
            let data = out.data_mut();
            for b in 0..batch {
                for t in 0..geom.time_out {
                    let src = &out_bt[(b * geom.time_out + t) * out_ch..][..out_ch];
                    for (o, v) in src.iter().enumerate() {
                        let bo = bias_vals.map_or(0.0, |bv| bv[o]);
                        data[(b * out_ch + o) * geom.time_out + t] = v + bo;
                    }
                }
            }
        }
        let needs = self.needs(input)
            || w.requires_grad
            || bias.is_some_and(|b| params.get(b).requires_grad);
        Ok(self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
                cols,
            },
            needs,
        ))
    }

    /// Per-channel normalization over `(batch, time)`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        params: &ParamStore,
        input: NodeId,
        gamma: ParamId,
        beta: ParamId,
        mode: BnMode<'_>,
        eps: f64,
    ) -> Result<NodeId, AutodiffError> {
        let x = self.value(input);
        let [batch, ch, time] = x.dims();
        let (g, bt) = (&params.get(gamma).value, &params.get(beta).value);
        if g.len() != ch || bt.len() != ch {
            return Err(AutodiffError::Dimension(format!(
                "batch norm over {ch} channels given gamma/beta of {}/{}",
                g.len(),
                bt.len()
            )));
        }
        if !(eps > 0.0) {
            return Err(AutodiffError::Dimension("batch norm eps must be > 0".into()));
        }
        let n = batch * time;
        if n == 0 {
            return Err(AutodiffError::EmptyInput);
        }
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; ch];
        let train = matches!(mode, BnMode::Train { .. });
        let (mut mean, mut var) = (vec![0.0; ch], vec![0.0; ch]);
        match &mode {
            BnMode::Train { .. } => {
                for c in 0..ch {
                    let mut s = 0.0;
                    for b in 0..batch {
                        s += x.row(b, c).iter().sum::<f64>();
                    }
                    let mu = s / n as f64;
                    let mut ss = 0.0;
                    for b in 0..batch {
                        ss += x.row(b, c).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                    }
                    mean[c] = mu;
                    var[c] = ss / n as f64;
                }
            }
            BnMode::Eval { running } => {
                mean.copy_from_slice(&running.mean);
                var.copy_from_slice(&running.var);
            }
        }
        let mut out = Tensor3::zeros(batch, ch, time);
        for c in 0..ch {
            inv_std[c] = 1.0 / (var[c] + eps).sqrt();
        }
        {
            let od = out.data_mut();
            let xd = x.data();
            for b in 0..batch {
                for c in 0..ch {
                    let base = (b * ch + c) * time;
                    for t in 0..time {
                        let h = (xd[base + t] - mean[c]) * inv_std[c];
                        xhat[base + t] = h;
                        od[base + t] = g[c] * h + bt[c];
                    }
                }
            }
        }
        if let BnMode::Train { running, momentum } = mode {
            let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            for c in 0..ch {
                running.mean[c] = (1.0 - momentum) * running.mean[c] + momentum * mean[c];
                running.var[c] = (1.0 - momentum) * running.var[c] + momentum * var[c] * unbias;
            }
        }
        let needs = self.needs(input)
            || params.get(gamma).requires_grad
            || params.get(beta).requires_grad;
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            needs,
        ))
    }

    pub fn activation(&mut self, input: NodeId, kind: Activation) -> NodeId {
        let x = self.value(input);
        let needs = self.needs(input);
        match kind {
            Activation::Relu => {
                let v = x.map(|a| a.max(0.0));
                self.push(v, Op::Relu(input), needs)
            }
            Activation::Sigmoid => {
                let v = x.map(sigmoid);
                self.push(v, Op::Sigmoid(input), needs)
            }
        }
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        self.activation(input, Activation::Sigmoid)
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(AutodiffError::Dimension(format!(
                "hadamard of {:?} and {:?}",
                va.dims(),
                vb.dims()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor3::from_vec(va.dims(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(AutodiffError::Dimension(format!(
                "add of {:?} and {:?}",
                va.dims(),
                vb.dims()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor3::from_vec(va.dims(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    /// Picks time indices `start, start + step, ...` (`len` of them).
    pub fn slice_time(
        &mut self,
        input: NodeId,
        start: usize,
        step: usize,
        len: usize,
    ) -> Result<NodeId, AutodiffError> {
        let x = self.value(input);
        let [batch, ch, time] = x.dims();
        if step == 0 || (len > 0 && start + (len - 1) * step >= time) {
            return Err(AutodiffError::Dimension(format!(
                "time slice start={start} step={step} len={len} out of range for {time} frames"
            )));
        }
        let mut out = Tensor3::zeros(batch, ch, len);
        for b in 0..batch {
            for c in 0..ch {
                let src = x.row(b, c);
                for t in 0..len {
                    out.set(b, c, t, src[start + t * step]);
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(out, Op::SliceTime { input, start, step }, needs))
    }

    /// Prepends `front` all-zero channels.
    pub fn pad_channels(&mut self, input: NodeId, front: usize) -> NodeId {
        let x = self.value(input);
        let [batch, ch, time] = x.dims();
        let mut out = Tensor3::zeros(batch, ch + front, time);
        for b in 0..batch {
            for c in 0..ch {
                let start = ((b * (ch + front)) + c + front) * time;
                out.data_mut()[start..start + time].copy_from_slice(x.row(b, c));
            }
        }
        let needs = self.needs(input);
        self.push(out, Op::PadChannels { input, front }, needs)
    }

    /// Inverted dropout with drop probability `p`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: NodeId, p: f64, rng: &mut R) -> NodeId {
        let x = self.value(input);
        let keep = 1.0 - p;
        let scale: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = x.data().iter().zip(&scale).map(|(a, s)| a * s).collect();
        let out = Tensor3::from_vec(x.dims(), data).expect("same dims");
        let needs = self.needs(input);
        self.push(out, Op::Dropout { input, scale }, needs)
    }

    /// Sum of all entries as a scalar node.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).data().iter().sum();
        let needs = self.needs(input);
        self.push(Tensor3::filled(1, 1, 1, s), Op::Sum(input), needs)
    }

    /// Mean over the batch of `(1/n_joints) * sum_i |pred_i - gt_i|^2`.
    ///
    /// `pred` is `[batch, 3 * n_joints, 1]`; `target` is batch-major `3 * n_joints` rows.
    pub fn mse_loss(
        &mut self,
        pred: NodeId,
        target: &[f64],
        n_joints: usize,
    ) -> Result<NodeId, AutodiffError> {
        let p = self.value(pred);
        let [batch, ch, time] = p.dims();
        if ch != 3 * n_joints || time != 1 || target.len() != batch * ch {
            return Err(AutodiffError::Dimension(format!(
                "mse over {n_joints} joints: prediction {:?}, target length {}",
                p.dims(),
                target.len()
            )));
        }
        if batch == 0 {
            return Err(AutodiffError::EmptyInput);
        }
        let sq: f64 = p
            .data()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let loss = sq / (batch * n_joints) as f64;
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor3::filled(1, 1, 1, loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
                n_joints,
            },
            needs,
        ))
    }

    /// Reverse sweep from a scalar node. Parameter gradients are added to
    /// whatever the store already holds.
    pub fn backward(&self, loss: NodeId, params: &mut ParamStore) -> Result<(), AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.value(loss).dims()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let p = params.get_mut(*id);
                    if p.requires_grad {
                        p.grad.iter_mut().zip(&gout).for_each(|(g, d)| *g += d);
                    }
                }
                Op::Conv {
                    input,
                    weight,
                    bias,
                    geom,
                    cols,
                } => self.conv_backward(
                    &gout, *input, *weight, *bias, geom, cols, params, &mut grads,
                ),
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let [batch, ch, time] = node.value.dims();
                    let n = (batch * time) as f64;
                    let mut dgamma = vec![0.0; ch];
                    let mut dbeta = vec![0.0; ch];
                    for b in 0..batch {
                        for c in 0..ch {
                            let base = (b * ch + c) * time;
                            for t in 0..time {
                                dgamma[c] += gout[base + t] * xhat[base + t];
                                dbeta[c] += gout[base + t];
                            }
                        }
                    }
                    if self.needs(*input) {
                        let g = &params.get(*gamma).value;
                        let mut dx = vec![0.0; gout.len()];
                        for c in 0..ch {
                            let k = g[c] * inv_std[c];
                            if *train {
                                // sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
                                let (s1, s2) = (dbeta[c], dgamma[c]);
                                for b in 0..batch {
                                    let base = (b * ch + c) * time;
                                    for t in 0..time {
                                        let i = base + t;
                                        dx[i] = k / n * (n * gout[i] - s1 - xhat[i] * s2);
                                    }
                                }
                            } else {
                                for b in 0..batch {
                                    let base = (b * ch + c) * time;
                                    for t in 0..time {
                                        dx[base + t] = k * gout[base + t];
                                    }
                                }
                            }
                        }
                        accumulate(&mut grads, *input, dx);
                    }
                    add_param_grad(params, *gamma, &dgamma);
                    add_param_grad(params, *beta, &dbeta);
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let dx = gout
                        .iter()
                        .zip(x)
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, dx);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let dx = gout
                        .iter()
                        .zip(y)
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    accumulate(&mut grads, *a, dx);
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let vb = self.value(*b).data();
                        accumulate(&mut grads, *a, gout.iter().zip(vb).map(|(g, v)| g * v).collect());
                    }
                    if self.needs(*b) {
                        let va = self.value(*a).data();
                        accumulate(&mut grads, *b, gout.iter().zip(va).map(|(g, v)| g * v).collect());
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, gout.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, gout);
                    }
                }
                Op::SliceTime { input, start, step } => {
                    let x = self.value(*input);
                    let [batch, ch, time] = x.dims();
                    let len = node.value.time();
                    let mut dx = vec![0.0; x.len()];
                    for b in 0..batch {
                        for c in 0..ch {
                            let ib = (b * ch + c) * time;
                            let ob = (b * ch + c) * len;
                            for t in 0..len {
                                dx[ib + start + t * step] += gout[ob + t];
                            }
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::PadChannels { input, front } => {
                    let x = self.value(*input);
                    let [batch, ch, time] = x.dims();
                    let mut dx = vec![0.0; x.len()];
                    for b in 0..batch {
                        for c in 0..ch {
                            let src = ((b * (ch + front)) + c + front) * time;
                            let dst = (b * ch + c) * time;
                            dx[dst..dst + time].copy_from_slice(&gout[src..src + time]);
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::Dropout { input, scale } => {
                    let dx = gout.iter().zip(scale).map(|(g, s)| g * s).collect();
                    accumulate(&mut grads, *input, dx);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, vec![gout[0]; n]);
                }
                Op::Mse {
                    pred,
                    target,
                    n_joints,
                } => {
                    let p = self.value(*pred);
                    let k = 2.0 * gout[0] / (p.batch() * n_joints) as f64;
                    let dx = p
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(a, b)| k * (a - b))
                        .collect();
                    accumulate(&mut grads, *pred, dx);
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        gout: &[f64],
        input: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
        geom: &ConvGeom,
        cols: &[f64],
        params: &mut ParamStore,
        grads: &mut [Option<Vec<f64>>],
    ) {
        let x = self.value(input);
        let [batch, in_ch, _] = x.dims();
        let (out_ch, kernel) = {
            let w = params.get(weight);
            (w.shape[0], w.shape[2])
        };
        let rows = batch * geom.time_out;
        let ik = in_ch * kernel;
        let mut g_bt = vec![0.0; rows * out_ch];
        for b in 0..batch {
            for o in 0..out_ch {
                let src = &gout[(b * out_ch + o) * geom.time_out..][..geom.time_out];
                for (t, g) in src.iter().enumerate() {
                    g_bt[(b * geom.time_out + t) * out_ch + o] = *g;
                }
            }
        }
        if let Some(bid) = bias {
            let bp = params.get_mut(bid);
            if bp.requires_grad {
                for r in 0..rows {
                    for (o, g) in g_bt[r * out_ch..][..out_ch].iter().enumerate() {
                        bp.grad[o] += g;
                    }
                }
            }
        }
        if self.needs(input) {
            let mut dcols = vec![0.0; rows * ik];
            gemm(
                rows,
                out_ch,
                ik,
                &g_bt,
                (out_ch, 1),
                &params.get(weight).value,
                (ik, 1),
                0.0,
                &mut dcols,
                (ik, 1),
            );
            let time_in = geom.time_in;
            let mut dx = vec![0.0; x.len()];
            for b in 0..batch {
                for i in 0..in_ch {
                    let base = (b * in_ch + i) * time_in;
                    for t in 0..geom.time_out {
                        let src = &dcols[(b * geom.time_out + t) * ik + i * kernel..][..kernel];
                        for (j, d) in src.iter().enumerate() {
                            dx[base + geom.source(t, j)] += d;
                        }
                    }
                }
            }
            accumulate(grads, input, dx);
        }
        let wp = params.get_mut(weight);
        if wp.requires_grad {
            gemm(
                out_ch,
                rows,
                ik,
                &g_bt,
                (1, out_ch),
                cols,
                (ik, 1),
                1.0,
                &mut wp.grad,
                (ik, 1),
            );
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, delta: Vec<f64>) {
    match &mut grads[id.0] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(delta),
    }
}

fn add_param_grad(params: &mut ParamStore, id: ParamId, delta: &[f64]) {
    let p = params.get_mut(id);
    if p.requires_grad {
        p.grad.iter_mut().zip(delta).for_each(|(g, d)| *g += d);
    }
}
