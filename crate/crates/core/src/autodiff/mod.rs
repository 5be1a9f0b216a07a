//! Reverse-mode differentiation, optimizers, and unrolled hypergradients.

mod fd;
mod hypergrad;
mod optim;
mod params;
mod scalar;
mod tape;

pub use fd::finite_difference;
pub use hypergrad::{
    hypergrad_unrolled, inner_hvp, inner_value_and_grad, meta_value_and_grad, InnerObjective, InnerOptimizer,
    MetaObjective, Unrolled,
};
pub(crate) use hypergrad::apply_inner_step;
pub use optim::{adamw_step, sgd_step, step_decay_lr, AdamWConfig, OptimizerState};
pub use params::{Block, ParamVector};
pub use scalar::{Dual, Real};
pub use tape::{Gradients, Op, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("loss node must be 1x1, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("non-finite gradient produced by `{op}` (node {node})")]
    NonFiniteGradient { op: &'static str, node: usize },
    #[error("non-finite parameter at index {index}")]
    NonFiniteParameter { index: usize },
    #[error("shape mismatch: expected length {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("non-finite inner loss at unroll step {step}")]
    NonFiniteLoss { step: usize },
    #[error("non-finite meta loss")]
    NonFiniteMetaLoss,
}
