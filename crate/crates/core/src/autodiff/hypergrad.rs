//! Exact reverse-mode differentiation through `k` unrolled inner updates.
//!
//! The forward sweep performs the inner updates in `f64`, checkpointing the
//! parameters entering each step. The reverse sweep walks the checkpoints
//! backwards; at each one a forward-over-reverse pass (the loss re-recorded
//! over [`Dual`] numbers) yields the Hessian-vector products
//! `∂²L/∂φ² · w` and `∂²L/∂α∂φ · w` in a single backward sweep.
//!
//! For AdamW inner steps the moment buffers entering a step are treated as
//! constants; only the dependence of `m̂/(√v̂+eps)` on the current gradient is
//! differentiated.

use serde::{Deserialize, Serialize};

use super::optim::{adamw_raw, AdamWConfig, OptimizerState};
use super::params::ParamVector;
use super::scalar::{Dual, Real};
use super::tape::{Tape, Var};
use super::AutodiffError;

/// Lower-level loss `L(φ, α)`. `step` selects the mini-batch of the unroll step.
pub trait InnerObjective {
    fn loss<T: Real>(&self, step: usize, tape: &mut Tape<T>, phi: Var, alpha: Var) -> Var;
}

/// Upper-level loss `U(φ)`.
pub trait MetaObjective {
    fn loss<T: Real>(&self, tape: &mut Tape<T>, phi: Var) -> Var;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerOptimizer {
    Sgd { lr: f64 },
    AdamW(AdamWConfig),
}

impl InnerOptimizer {
    pub fn lr(&self) -> f64 {
        match self {
            InnerOptimizer::Sgd { lr } => *lr,
            InnerOptimizer::AdamW(c) => c.lr,
        }
    }
}

/// Output of [`hypergrad_unrolled`].
#[derive(Clone, Debug)]
pub struct Unrolled {
    /// `d U(φ_k) / d α`
    pub alpha_grad: Vec<f64>,
    /// Parameters after the k inner steps.
    pub phi: ParamVector,
    /// Optimizer state after the k inner steps (untouched for SGD).
    pub state: OptimizerState,
    /// Inner loss at each step, evaluated before the step.
    pub inner_losses: Vec<f64>,
    /// `U(φ_k)`
    pub meta_loss: f64,
}

pub(crate) struct StepRecord {
    /// Per-coordinate derivative of the normalized update w.r.t. the gradient.
    diag: Option<Vec<f64>>,
}

/// Loss value and `∂L/∂φ` at `(φ, α)`.
pub fn inner_value_and_grad<I: InnerObjective>(
    inner: &I,
    step: usize,
    phi: &[f64],
    alpha: &[f64],
) -> Result<(f64, Vec<f64>), AutodiffError> {
    let mut tape = Tape::<f64>::new();
    let p = tape.leaf(phi.to_vec(), phi.len(), 1);
    let a = tape.constant(alpha.to_vec(), alpha.len(), 1);
    let loss = inner.loss(step, &mut tape, p, a);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(AutodiffError::NonFiniteLoss { step });
    }
    let grads = tape.backward(loss)?;
    Ok((value, grads.wrt(p)))
}

pub fn meta_value_and_grad<M: MetaObjective>(meta: &M, phi: &[f64]) -> Result<(f64, Vec<f64>), AutodiffError> {
    let mut tape = Tape::<f64>::new();
    let p = tape.leaf(phi.to_vec(), phi.len(), 1);
    let loss = meta.loss(&mut tape, p);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(AutodiffError::NonFiniteMetaLoss);
    }
    let grads = tape.backward(loss)?;
    Ok((value, grads.wrt(p)))
}

/// `(∂²L/∂φ² · w, ∂²L/∂α∂φ · w)` by forward-over-reverse.
pub fn inner_hvp<I: InnerObjective>(
    inner: &I,
    step: usize,
    phi: &[f64],
    alpha: &[f64],
    direction: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), AutodiffError> {
    let mut tape = Tape::<Dual>::new();
    let pv = phi.iter().zip(direction).map(|(&x, &d)| Dual::new(x, d)).collect();
    let av = alpha.iter().map(|&x| Dual::constant(x)).collect();
    let p = tape.leaf(pv, phi.len(), 1);
    let a = tape.leaf(av, alpha.len(), 1);
    let loss = inner.loss(step, &mut tape, p, a);
    let grads = tape.backward(loss)?;
    let hp = grads.wrt(p).into_iter().map(|d| d.eps).collect();
    let ha = grads.wrt(a).into_iter().map(|d| d.eps).collect();
    Ok((hp, ha))
}

/// One inner optimizer step on raw slices.
pub(crate) fn apply_inner_step(
    opt: &InnerOptimizer,
    phi: &[f64],
    grad: &[f64],
    state: &OptimizerState,
) -> (Vec<f64>, OptimizerState, StepRecord) {
    match opt {
        InnerOptimizer::Sgd { lr } => {
            let next = phi.iter().zip(grad).map(|(p, g)| p - lr * g).collect();
            (next, state.clone(), StepRecord { diag: None })
        }
        InnerOptimizer::AdamW(cfg) => {
            let step = adamw_raw(phi, grad, state, cfg);
            (step.params, step.state, StepRecord { diag: Some(step.dupdate_dgrad) })
        }
    }
}

/// Runs `k` inner updates from `phi0` under fixed `alpha` and returns the
/// exact derivative of the meta loss at the final iterate with respect to
/// `alpha`.
pub fn hypergrad_unrolled<I: InnerObjective, M: MetaObjective>(
    inner: &I,
    meta: &M,
    phi0: &ParamVector,
    alpha: &ParamVector,
    k: usize,
    opt: &InnerOptimizer,
    state: &OptimizerState,
) -> Result<Unrolled, AutodiffError> {
    assert!(k >= 1, "at least one unroll step is required");
    let alpha_v = alpha.values();
    let mut checkpoints: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut records = Vec::with_capacity(k);
    let mut inner_losses = Vec::with_capacity(k);
    let mut phi = phi0.values().to_vec();
    let mut st = state.clone();

    for step in 0..k {
        let (loss, grad) = inner_value_and_grad(inner, step, &phi, alpha_v)?;
        inner_losses.push(loss);
        let (next, next_state, rec) = apply_inner_step(opt, &phi, &grad, &st);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(AutodiffError::NonFiniteLoss { step });
        }
        checkpoints.push(std::mem::replace(&mut phi, next));
        records.push(rec);
        st = next_state;
    }

    let (meta_loss, mut adj) = meta_value_and_grad(meta, &phi)?;
    let mut alpha_grad = vec![0.0; alpha_v.len()];
    let lr = opt.lr();
    let decay = match opt {
        InnerOptimizer::Sgd { .. } => 1.0,
        InnerOptimizer::AdamW(c) => 1.0 - c.lr * c.weight_decay,
    };

    // φ_{t+1} = decay·φ_t − lr·u(∇L(φ_t, α)), with u the identity for SGD.
    for step in (0..k).rev() {
        let w: Vec<f64> = match &records[step].diag {
            None => adj.clone(),
            Some(d) => adj.iter().zip(d).map(|(a, d)| a * d).collect(),
        };
        let (h_phi, h_alpha) = inner_hvp(inner, step, &checkpoints[step], alpha_v, &w)?;
        for (g, h) in alpha_grad.iter_mut().zip(&h_alpha) {
            *g -= lr * h;
        }
        for (a, h) in adj.iter_mut().zip(&h_phi) {
            *a = decay * *a - lr * h;
        }
    }

    Ok(Unrolled {
        alpha_grad,
        phi: phi0.with_values(phi)?,
        state: st,
        inner_losses,
        meta_loss,
    })
}
