//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Result};
use crate::math;
use crate::model::{ParamKind, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !beta_ok(self.beta1) || !beta_ok(self.beta2) || self.eps.is_nan() || self.eps <= 0.0 {
            return Err(config_err!("invalid Adam settings {self:?}"));
        }
        Ok(())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment estimates. Buffers get empty moment vectors and
/// are never touched.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    beta1_pow: f64,
    beta2_pow: f64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = |e: &crate::model::ParamEntry| match e.kind {
            ParamKind::Trainable => vec![0.0; e.tensor.numel()],
            ParamKind::Buffer => Vec::new(),
        };
        Self {
            config,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            step: 0,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update, in place. `grads[i]` is the gradient of entry `i`;
/// `None` leaves that entry (and its moments) untouched.
pub fn adam_step(state: &mut OptimizerState, params: &mut ParamSet, grads: &[Option<&[f64]>]) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(dim_err!(
            "adam: {} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        ));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            let e = &params.entries()[i];
            if e.kind != ParamKind::Trainable || g.len() != e.tensor.numel() {
                return Err(dim_err!("adam: gradient for {:?} has {} values, expected {}", e.name, g.len(), e.tensor.numel()));
            }
        }
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    state.beta1_pow *= beta1;
    state.beta2_pow *= beta2;
    let (c1, c2) = (1.0 - state.beta1_pow, 1.0 - state.beta2_pow);
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = params.tensor_mut(i).data_mut();
        for j in 0..p.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (math::sqrt(v_hat) + eps);
        }
    }
    Ok(())
}
