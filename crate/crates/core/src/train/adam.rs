use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{Gradients, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for Adam, congruent with the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            config,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::ShapeMismatch("gradients do not match parameters".into()));
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    let grads = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
