//! Minimal reverse-mode differentiation for the pose-lifting network.
//!
//! Only the operations the network needs are provided: dilated temporal
//! convolution, batch normalization, ReLU/sigmoid, elementwise products and
//! sums, time slicing, channel padding, dropout and the per-joint squared
//! error loss. Everything runs in `f64`.

mod gemm;
mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{
    analytic_gradients, check_gradients, grad_check, GradCheckConfig, GradCheckReport,
};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{sigmoid, Activation, BnMode, ConvSpec, NodeId, Padding, RunningStats, Tape};
pub use tensor::Tensor3;

/// Batch-norm epsilon used throughout the network.
pub const BN_EPS: f64 = 1e-5;
/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("window too short: need at least {needed} frames, got {got}")]
    Window { needed: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("loss must be a scalar, got dims {0:?}")]
    NonScalarLoss([usize; 3]),
}

#[cfg(test)]
mod tests;
