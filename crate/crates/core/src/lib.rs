//! Domain-reweighted process reward model training.
//!
//! A step scorer is trained on several data domains whose losses are mixed by
//! learnable weights; the weights are tuned by bi-level optimization against an
//! aggregated-score loss on a cleaner meta domain. Reasoning trajectories come
//! from a synthetic simulator with known ground truth.

pub mod autodiff;
pub mod seed;
pub mod sim;
pub mod supervision;
pub mod prm;
pub mod bilevel;
pub mod select;
pub mod pipeline;
