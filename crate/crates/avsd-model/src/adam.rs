//! Bias-corrected Adam over the model's parameter blocks.

use crate::model::{ToyLMConfig, ToyLMGrads, ToyLMParams};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates, flat over all blocks in declaration order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(cfg: &ToyLMConfig) -> Self {
        let n = cfg.param_count();
        Self {
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One deterministic Adam update in place.
pub fn adam_step(
    params: &mut ToyLMParams,
    grads: &ToyLMGrads,
    state: &mut AdamState,
    opt: &AdamConfig,
) {
    state.t += 1;
    let bc1 = 1.0 - opt.beta1.powi(state.t as i32);
    let bc2 = 1.0 - opt.beta2.powi(state.t as i32);
    let mut offset = 0;
    let grad_blocks = grads.block_slices();
    for (block_idx, block) in params.block_slices_mut().into_iter().enumerate() {
        let g = grad_blocks[block_idx];
        for (i, p) in block.iter_mut().enumerate() {
            let slot = offset + i;
            let m = &mut state.m[slot];
            let v = &mut state.v[slot];
            *m = opt.beta1 * *m + (1.0 - opt.beta1) * g[i];
            *v = opt.beta2 * *v + (1.0 - opt.beta2) * g[i] * g[i];
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= opt.lr * m_hat / (v_hat.sqrt() + opt.epsilon);
        }
        offset += g.len();
    }
}
