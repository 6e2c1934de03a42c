use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplicative learning-rate factor applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.95,
            decay_every: 20,
        }
    }
}

/// `base * decay^floor(epoch / every)`.
pub fn learning_rate(cfg: &AdamConfig, epoch: usize) -> f64 {
    let every = cfg.decay_every.max(1);
    cfg.lr * cfg.decay.powi((epoch / every) as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
    pub lr: f64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(shapes: &[(usize, usize)], config: AdamConfig) -> Self {
        Self {
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            step: 0,
            lr: config.lr,
            config,
        }
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.lr = learning_rate(&self.config, epoch);
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching any state.
pub fn adam_step(params: &mut [&mut Matrix], grads: &[Matrix], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::invalid(format!("adam: shape mismatch for tensor {i}")));
        }
        if !g.is_finite() {
            return Err(Error::TrainingDiverged(format!("non-finite gradient in tensor {i}")));
        }
    }
    let cfg = &state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *w -= state.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
