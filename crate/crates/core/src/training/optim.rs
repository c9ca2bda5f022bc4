//! Decoupled-weight-decay Adam and the per-epoch learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Multiplier applied to the learning rate once per epoch.
    pub lr_decay: f64,
    /// Batches whose gradients are summed before each update.
    pub accumulation: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-9,
            weight_decay: 0.01,
            lr_decay: 0.999875,
            accumulation: 2,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and ≥ 0",
                self.lr
            )));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config(format!(
                "betas ({}, {}) outside [0, 1)",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0)
            || self.weight_decay < 0.0
            || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0)
        {
            return Err(Error::Config(
                "eps > 0, weight_decay ≥ 0 and lr_decay in (0, 1] required".into(),
            ));
        }
        if self.accumulation == 0 {
            return Err(Error::Config("accumulation must be at least 1".into()));
        }
        Ok(())
    }

    /// `lr · decay^epoch`.
    pub fn learning_rate(&self, epoch: u64) -> f64 {
        self.lr * self.lr_decay.powf(epoch as f64)
    }
}

/// One AdamW update of every tensor. `t` is the 1-based update count.
pub fn adamw_step(
    cfg: &OptimizerConfig,
    lr: f64,
    t: u64,
    params: &mut [Tensor<f32>],
    grads: &[Tensor<f32>],
    m: &mut [Tensor<f32>],
    v: &mut [Tensor<f32>],
) {
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    let (inv_c1, inv_c2) = ((1.0 / c1) as f32, (1.0 / c2) as f32);
    let (lr, eps, wd) = (lr as f32, cfg.eps as f32, cfg.weight_decay as f32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            if lr != 0.0 {
                *p -= lr * ((*m * inv_c1) / ((*v * inv_c2).sqrt() + eps) + wd * *p);
            }
        }
    }
}
