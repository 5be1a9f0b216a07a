//! The step scorer and the losses built on it.
//!
//! The scorer maps a prefix to a probability that the prefix is on a path to
//! a correct answer. Its input is the mean of the prefix's step features, the
//! current step's features, and the normalized position `i / n`; two tanh
//! hidden layers feed a sigmoid output.
//!
//! Candidate trajectories are ranked by the sum of per-step log-odds
//! ([`aggregate`]). The upper-level loss ([`AflObjective`]) squashes that sum
//! through a sigmoid and regresses it on the binary outcome.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_SCHEMA_VERSION};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Block, InnerObjective, MetaObjective, ParamVector, Real, Tape, Var};
use crate::seed;
use crate::sim::{Step, Trajectory, FEATURE_DIM};
use crate::supervision::LabeledPrefix;

/// Scores are clamped to `[LOGIT_EPS, 1 − LOGIT_EPS]` before taking log-odds.
pub const LOGIT_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PrmError {
    #[error("prefix is empty")]
    EmptyPrefix,
    #[error("non-finite feature in step {step}")]
    NonFiniteFeatures { step: usize },
    #[error("cannot aggregate an empty score list")]
    EmptyScores,
    #[error("expected {expected} domain weights, found {found}")]
    WeightCount { expected: usize, found: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Layer sizes of the scorer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrmArch {
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for PrmArch {
    fn default() -> Self {
        Self { feature_dim: FEATURE_DIM, hidden: vec![32, 32] }
    }
}

impl PrmArch {
    pub fn input_dim(&self) -> usize {
        2 * self.feature_dim + 1
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut fan_in = self.input_dim();
        for &h in &self.hidden {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, 1));
        dims
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.layer_dims()
            .iter()
            .enumerate()
            .flat_map(|(l, &(i, o))| [Block::new(format!("w{l}"), &[i, o]), Block::new(format!("b{l}"), &[o])])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(Block::size).sum()
    }

    /// Scores for each row of `inputs` (`rows x input_dim`), as a `rows x 1` node.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, phi: Var, inputs: Var) -> Var {
        let mut h = inputs;
        let mut offset = 0;
        let dims = self.layer_dims();
        for (l, &(i, o)) in dims.iter().enumerate() {
            let w = tape.slice(phi, offset, i, o);
            offset += i * o;
            let b = tape.slice(phi, offset, 1, o);
            offset += o;
            let z = tape.matmul(h, w);
            let z = tape.add_row(z, b);
            h = if l + 1 == dims.len() { tape.sigmoid(z) } else { tape.tanh(z) };
        }
        h
    }
}

/// Scorer parameters `φ` and their architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct PrmParams {
    pub arch: PrmArch,
    pub params: ParamVector,
}

impl PrmParams {
    /// Glorot-uniform hidden layers, zero biases, zero output layer (so every
    /// initial score is exactly 0.5).
    pub fn init(arch: PrmArch, seed: u64) -> Self {
        let mut rng = seed::rng(seed, &[seed::tag("prm-init")]);
        let dims = arch.layer_dims();
        let mut values = Vec::with_capacity(arch.param_count());
        for (l, &(i, o)) in dims.iter().enumerate() {
            let last = l + 1 == dims.len();
            let a = (6.0 / (i + o) as f64).sqrt();
            for _ in 0..i * o {
                values.push(if last { 0.0 } else { rng.random_range(-a..a) });
            }
            values.extend(std::iter::repeat_n(0.0, o));
        }
        let params = ParamVector::new(values, arch.blocks()).expect("initial parameters are finite");
        Self { arch, params }
    }

    pub fn from_values(arch: PrmArch, values: Vec<f64>) -> Result<Self, PrmError> {
        let params = ParamVector::new(values, arch.blocks()).map_err(|e| PrmError::Checkpoint(e.to_string()))?;
        Ok(Self { arch, params })
    }

    /// Scores of many prefixes at once; `inputs` is row-major `rows x input_dim`.
    pub fn score_inputs(&self, inputs: &[f64]) -> Vec<f64> {
        let d = self.arch.input_dim();
        let rows = inputs.len() / d;
        if rows == 0 {
            return Vec::new();
        }
        let mut tape = Tape::<f64>::new();
        let phi = tape.constant(self.params.values().to_vec(), self.params.len(), 1);
        let x = tape.constant(inputs.to_vec(), rows, d);
        let out = self.arch.forward(&mut tape, phi, x);
        tape.value(out).to_vec()
    }
}

/// Fixed-size scorer input for a prefix of a trajectory of length `n`.
pub fn encode_prefix(features: &[Vec<f64>], n: usize) -> Vec<f64> {
    let d = features[0].len();
    let i = features.len();
    let mut out = vec![0.0; 2 * d + 1];
    for f in features {
        for (o, &x) in out[..d].iter_mut().zip(f) {
            *o += x / i as f64;
        }
    }
    out[d..2 * d].copy_from_slice(&features[i - 1]);
    out[2 * d] = i as f64 / n as f64;
    out
}

fn check_steps(prefix: &[Step]) -> Result<(), PrmError> {
    if prefix.is_empty() {
        return Err(PrmError::EmptyPrefix);
    }
    for s in prefix {
        if s.features.iter().any(|x| !x.is_finite()) {
            return Err(PrmError::NonFiniteFeatures { step: s.index });
        }
    }
    Ok(())
}

/// Score of the last step of `prefix`, where complete trajectories have `n` steps.
pub fn score_step(phi: &PrmParams, prefix: &[Step], n: usize) -> Result<f64, PrmError> {
    check_steps(prefix)?;
    let feats: Vec<Vec<f64>> = prefix.iter().map(|s| s.features.clone()).collect();
    Ok(phi.score_inputs(&encode_prefix(&feats, n))[0])
}

/// Row-major scorer inputs for every prefix of `t`.
pub fn trajectory_inputs(t: &Trajectory) -> Vec<f64> {
    let n = t.steps.len();
    let feats: Vec<Vec<f64>> = t.steps.iter().map(|s| s.features.clone()).collect();
    (1..=n).flat_map(|i| encode_prefix(&feats[..i], n)).collect()
}

/// Per-step scores `p_1..p_n` of a trajectory.
pub fn score_trajectory(phi: &PrmParams, t: &Trajectory) -> Result<Vec<f64>, PrmError> {
    check_steps(&t.steps)?;
    Ok(phi.score_inputs(&trajectory_inputs(t)))
}

/// `Σ_i log(p_i / (1 − p_i))` with each `p_i` clamped to `[ε, 1 − ε]`.
pub fn aggregate(p: &[f64]) -> Result<f64, PrmError> {
    if p.is_empty() {
        return Err(PrmError::EmptyScores);
    }
    Ok(p.iter()
        .map(|&x| {
            let x = x.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
            (x / (1.0 - x)).ln()
        })
        .sum())
}

/// 1 when the trajectory reached the correct answer.
pub fn correctness_signal(t: &Trajectory) -> u8 {
    t.final_correct as u8
}

/// Labeled prefixes packed for the tape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrefixBatch {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl PrefixBatch {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a LabeledPrefix>) -> Self {
        let mut b = PrefixBatch::default();
        for l in labels {
            b.inputs.extend(encode_prefix(&l.features, l.steps_total));
            b.targets.push(l.p);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Whole trajectories packed for the tape: every prefix of every trajectory,
/// with segment lengths for per-trajectory sums.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryBatch {
    pub inputs: Vec<f64>,
    pub lengths: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn from_trajectories<'a>(ts: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let mut b = TrajectoryBatch::default();
        for t in ts {
            b.inputs.extend(trajectory_inputs(t));
            b.lengths.push(t.steps.len());
            b.rewards.push(correctness_signal(t) as f64);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

fn input_var<T: Real>(tape: &mut Tape<T>, arch: &PrmArch, inputs: &[f64]) -> Var {
    let d = arch.input_dim();
    tape.constant(inputs.iter().map(|&x| T::from_f64(x)).collect(), inputs.len() / d, d)
}

/// `mean_j (V_φ(prefix_j) − p_j)²`
pub fn mse_on_tape<T: Real>(tape: &mut Tape<T>, arch: &PrmArch, phi: Var, batch: &PrefixBatch) -> Var {
    let x = input_var(tape, arch, &batch.inputs);
    let scores = arch.forward(tape, phi, x);
    let targets = tape.constant(batch.targets.iter().map(|&y| T::from_f64(y)).collect(), batch.len(), 1);
    let diff = tape.sub(scores, targets);
    let sq = tape.square(diff);
    tape.mean(sq)
}

/// `Σ_k α_k · L_k(φ)`; domains with an empty batch contribute nothing.
pub fn weighted_mse_on_tape<T: Real>(
    tape: &mut Tape<T>,
    arch: &PrmArch,
    phi: Var,
    alpha: Var,
    batches: &[PrefixBatch],
) -> Var {
    let mut total: Option<Var> = None;
    for (k, batch) in batches.iter().enumerate() {
        if batch.is_empty() {
            continue;
        }
        let l = mse_on_tape(tape, arch, phi, batch);
        let a = tape.slice(alpha, k, 1, 1);
        let term = tape.mul(l, a);
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    total.unwrap_or_else(|| tape.scalar_constant(0.0))
}

/// `mean_j (σ(A(p^{(j)}) / temperature) − r_j)²`
pub fn afl_on_tape<T: Real>(
    tape: &mut Tape<T>,
    arch: &PrmArch,
    phi: Var,
    batch: &TrajectoryBatch,
    temperature: f64,
) -> Var {
    let x = input_var(tape, arch, &batch.inputs);
    let p = arch.forward(tape, phi, x);
    let p = tape.clamp(p, LOGIT_EPS, 1.0 - LOGIT_EPS);
    let q = tape.affine(p, -1.0, 1.0);
    let lp = tape.log(p);
    let lq = tape.log(q);
    let logit = tape.sub(lp, lq);
    let agg = tape.segment_sum(logit, batch.lengths.clone());
    let agg = tape.affine(agg, 1.0 / temperature, 0.0);
    let s = tape.sigmoid(agg);
    let r = tape.constant(batch.rewards.iter().map(|&y| T::from_f64(y)).collect(), batch.len(), 1);
    let diff = tape.sub(s, r);
    let sq = tape.square(diff);
    tape.mean(sq)
}

fn eval_scalar(build: impl FnOnce(&mut Tape<f64>, Var) -> Var, phi: &PrmParams) -> f64 {
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(phi.params.values().to_vec(), phi.params.len(), 1);
    let out = build(&mut tape, p);
    tape.scalar(out)
}

/// Lower-level loss on one domain: mean squared error against Monte-Carlo labels.
pub fn train_loss_single_domain(phi: &PrmParams, labeled: &[LabeledPrefix]) -> f64 {
    let batch = PrefixBatch::from_labels(labeled);
    eval_scalar(|t, p| mse_on_tape(t, &phi.arch, p, &batch), phi)
}

pub fn weighted_train_loss(phi: &PrmParams, alpha: &[f64], per_domain: &[&[LabeledPrefix]]) -> Result<f64, PrmError> {
    if alpha.len() != per_domain.len() {
        return Err(PrmError::WeightCount { expected: per_domain.len(), found: alpha.len() });
    }
    let batches: Vec<PrefixBatch> = per_domain.iter().map(|d| PrefixBatch::from_labels(*d)).collect();
    Ok(eval_scalar(
        |t, p| {
            let a = t.constant(alpha.to_vec(), alpha.len(), 1);
            weighted_mse_on_tape(t, &phi.arch, p, a, &batches)
        },
        phi,
    ))
}

/// Aggregated-score loss on whole trajectories, temperature 1.
pub fn meta_loss(phi: &PrmParams, meta_set: &[Trajectory]) -> f64 {
    let batch = TrajectoryBatch::from_trajectories(meta_set);
    eval_scalar(|t, p| afl_on_tape(t, &phi.arch, p, &batch, 1.0), phi)
}

/// Ablation upper-level loss: the per-prefix MSE on meta labels.
pub fn per_step_meta_loss(phi: &PrmParams, labeled_meta: &[LabeledPrefix]) -> f64 {
    train_loss_single_domain(phi, labeled_meta)
}

/// Lower-level objective over `k` unroll steps: one batch per domain per step.
pub struct WeightedTrainObjective<'a> {
    pub arch: &'a PrmArch,
    pub steps: Vec<Vec<PrefixBatch>>,
}

impl InnerObjective for WeightedTrainObjective<'_> {
    fn loss<T: Real>(&self, step: usize, tape: &mut Tape<T>, phi: Var, alpha: Var) -> Var {
        weighted_mse_on_tape(tape, self.arch, phi, alpha, &self.steps[step])
    }
}

pub struct AflObjective<'a> {
    pub arch: &'a PrmArch,
    pub batch: TrajectoryBatch,
    pub temperature: f64,
}

impl MetaObjective for AflObjective<'_> {
    fn loss<T: Real>(&self, tape: &mut Tape<T>, phi: Var) -> Var {
        afl_on_tape(tape, self.arch, phi, &self.batch, self.temperature)
    }
}

pub struct PerStepObjective<'a> {
    pub arch: &'a PrmArch,
    pub batch: PrefixBatch,
}

impl MetaObjective for PerStepObjective<'_> {
    fn loss<T: Real>(&self, tape: &mut Tape<T>, phi: Var) -> Var {
        mse_on_tape(tape, self.arch, phi, &self.batch)
    }
}

#[cfg(test)]
mod tests;
