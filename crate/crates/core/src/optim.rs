//! AdamW with bias correction. Frozen tensors are never touched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::GradientSet;
use crate::head::{RewardHeadParams, Tensor, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        // 0 is allowed for the decay rates so degenerate sign-update checks work.
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Range(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.epsilon.is_nan()
            || self.epsilon < 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return Err(Error::Range("epsilon and weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// First and second moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(p: &RewardHeadParams) -> Self {
        let zeros = || {
            TensorId::ALL
                .iter()
                .map(|&id| {
                    let t = p.tensor(id);
                    Tensor::zeros(t.rows, t.cols)
                })
                .collect::<Vec<_>>()
        };
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn first_moment(&self, id: TensorId) -> &Tensor {
        &self.m[id.index()]
    }

    pub fn second_moment(&self, id: TensorId) -> &Tensor {
        &self.v[id.index()]
    }
}

/// One decoupled-weight-decay Adam update.
pub fn optimizer_step(
    params: &mut RewardHeadParams,
    grads: &GradientSet,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    for id in TensorId::ALL {
        let (p, g) = (params.tensor(id), grads.tensor(id));
        let m = &state.m[id.index()];
        if (p.rows, p.cols) != (g.rows, g.cols) || (p.rows, p.cols) != (m.rows, m.cols) {
            return Err(Error::Shape(format!(
                "tensor {id}: parameter {}x{}, gradient {}x{}, state {}x{}",
                p.rows, p.cols, g.rows, g.cols, m.rows, m.cols
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for id in TensorId::ALL {
        if params.is_frozen(id) {
            continue;
        }
        let g = &grads.tensor(id).data;
        let m = &mut state.m[id.index()].data;
        let v = &mut state.v[id.index()].data;
        let p = &mut params.tensor_mut(id).data;
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * (m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * p[k]);
        }
    }
    Ok(())
}
