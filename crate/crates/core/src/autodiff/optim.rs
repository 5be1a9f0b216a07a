//! Plain SGD, decoupled-weight-decay Adam, and a step-decay schedule.
//!
//! All steps are pure: they return fresh parameter and state values.

use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use super::AutodiffError;

/// Adam moment buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay, ..Self::default() }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 0.0, betas: (0.9, 0.999), eps: 1e-8 }
    }
}

pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector, AutodiffError> {
    params.check_same_len(grad)?;
    let values = params.values().iter().zip(grad.values()).map(|(p, g)| p - lr * g).collect();
    params.with_values(values)
}

/// Result of one AdamW step on raw slices, plus the per-coordinate derivative
/// of the normalized update `m̂/(√v̂+eps)` with respect to the current
/// gradient, holding the previous moments fixed.
pub(crate) struct AdamStep {
    pub params: Vec<f64>,
    pub state: OptimizerState,
    pub dupdate_dgrad: Vec<f64>,
}

pub(crate) fn adamw_raw(params: &[f64], grad: &[f64], state: &OptimizerState, cfg: &AdamWConfig) -> AdamStep {
    let (b1, b2) = cfg.betas;
    let t = state.t + 1;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let n = params.len();
    let mut out = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let g = grad[i];
        let mi = b1 * state.m[i] + (1.0 - b1) * g;
        let vi = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        let root = v_hat.sqrt();
        let denom = root + cfg.eps;
        let update = m_hat / denom;
        let mut du = (1.0 - b1) / bc1 / denom;
        if root > 0.0 {
            du -= m_hat / (denom * denom) * (1.0 - b2) * g / (bc2 * root);
        }
        out.push(params[i] * (1.0 - cfg.lr * cfg.weight_decay) - cfg.lr * update);
        m.push(mi);
        v.push(vi);
        d.push(du);
    }
    AdamStep { params: out, state: OptimizerState { m, v, t }, dupdate_dgrad: d }
}

pub fn adamw_step(
    params: &ParamVector,
    grad: &ParamVector,
    state: &OptimizerState,
    cfg: &AdamWConfig,
) -> Result<(ParamVector, OptimizerState), AutodiffError> {
    params.check_same_len(grad)?;
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(AutodiffError::ShapeMismatch { expected: params.len(), found: state.m.len() });
    }
    let step = adamw_raw(params.values(), grad.values(), state, cfg);
    Ok((params.with_values(step.params)?, step.state))
}

/// `lr0 · gamma^⌊t / step_size⌋`
pub fn step_decay_lr(lr0: f64, step_size: u64, gamma: f64, t: u64) -> f64 {
    assert!(step_size >= 1, "step_size must be at least 1");
    lr0 * gamma.powi((t / step_size) as i32)
}
