//! AMSGrad with bias-corrected moments and the per-epoch exponential
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmsGradConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AmsGradConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: first and second moments and the running maximum of the
/// bias-corrected second moment, one vector per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AmsGrad {
    pub config: AmsGradConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub v_max: Vec<Vec<f64>>,
}

impl AmsGrad {
    pub fn new(params: &ParamStore, config: AmsGradConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros.clone(),
            v_max: zeros,
        }
    }

    /// Applies one update from the gradients stored in `params`.
    ///
    /// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
    /// `v_max <- max(v_max, v / (1-b2^t))`,
    /// `w <- w - lr (m / (1-b1^t)) / (sqrt(v_max) + eps)`.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) {
        self.step += 1;
        let AmsGradConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.requires_grad {
                continue;
            }
            let (m, v, vm) = (&mut self.m[i], &mut self.v[i], &mut self.v_max[i]);
            for (j, (w, &g)) in p.value.iter_mut().zip(&p.grad).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                vm[j] = vm[j].max(v[j] / c2);
                *w -= lr * (m[j] / c1) / (vm[j].sqrt() + eps);
            }
        }
    }
}

/// `lr0 * decay^epoch`.
pub fn lr_at_epoch(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 * decay.powi(epoch as i32)
}
