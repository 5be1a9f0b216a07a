//! Alternating bi-level training of the scorer and the domain weights.
//!
//! Each outer iteration runs `k` inner optimizer steps on the
//! domain-weighted training loss, differentiates the upper-level loss at the
//! resulting parameters through those steps, and takes one AdamW step on the
//! domain weights. The inner steps are kept: the unrolled window *is* the
//! lower-level training.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    adamw_step, apply_inner_step, hypergrad_unrolled, inner_value_and_grad, step_decay_lr, AdamWConfig,
    AutodiffError, InnerOptimizer, MetaObjective, OptimizerState, ParamVector, Tape,
};
use crate::prm::{
    AflObjective, Checkpoint, PerStepObjective, PrefixBatch, PrmArch, PrmParams, TrajectoryBatch,
    WeightedTrainObjective,
};
use crate::seed;
use crate::sim::Trajectory;
use crate::supervision::{LabeledDomain, LabeledPrefix};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training domain `{0}` has no labeled prefixes")]
    EmptyDomain(String),
    #[error("meta set is empty")]
    EmptyMeta,
    /// `loss` is the offending loss, weight or parameter value.
    #[error("diverged at outer iteration {iteration}: value {loss} is non-finite or beyond the divergence threshold")]
    Diverged { iteration: usize, loss: f64 },
    #[error("numerical failure at outer iteration {iteration}: {source}")]
    Numerical { iteration: usize, source: AutodiffError },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerOptimizerKind {
    Sgd,
    Adamw,
}

/// Whether the inner optimizer's moments survive across outer iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerStatePolicy {
    Persist,
    Reset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperObjective {
    /// Sigmoid of the aggregated log-odds against the binary outcome.
    Afl,
    /// Per-prefix MSE on meta labels (ablation).
    PerStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub unroll_steps: usize,
    pub inner_optimizer: InnerOptimizerKind,
    pub inner_lr: f64,
    pub inner_weight_decay: f64,
    pub inner_state: InnerStatePolicy,
    pub outer_lr: f64,
    pub outer_weight_decay: f64,
    pub outer_step_size: u64,
    pub outer_gamma: f64,
    pub outer_iterations: usize,
    /// Prefixes per domain per inner step.
    pub batch_size: usize,
    /// Meta trajectories per outer step.
    pub meta_batch_size: usize,
    pub upper_objective: UpperObjective,
    /// Divides the summed log-odds before the sigmoid. Setting it to the
    /// trajectory length turns the sum into a mean, which keeps the
    /// aggregate from saturating.
    pub meta_temperature: f64,
    pub checkpoint_every: usize,
    /// Bound on the absolute value of any loss, domain weight or PRM
    /// parameter before a run is declared diverged.
    pub divergence_threshold: f64,
    pub arch: PrmArch,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            unroll_steps: 5,
            inner_optimizer: InnerOptimizerKind::Adamw,
            inner_lr: 1e-3,
            inner_weight_decay: 0.0,
            inner_state: InnerStatePolicy::Persist,
            outer_lr: 0.01,
            outer_weight_decay: 1e-3,
            outer_step_size: 5000,
            outer_gamma: 0.5,
            outer_iterations: 2000,
            batch_size: 32,
            meta_batch_size: 32,
            upper_objective: UpperObjective::Afl,
            meta_temperature: 5.0,
            checkpoint_every: 500,
            divergence_threshold: 1e6,
            arch: PrmArch::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-scale settings: 10000 outer iterations at inner lr 5e-7.
    pub fn full_scale() -> Self {
        Self { outer_iterations: 10_000, inner_lr: 5e-7, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.unroll_steps == 0 {
            return err("unroll_steps must be at least 1");
        }
        if !(self.inner_lr > 0.0 && self.outer_lr > 0.0) {
            return err("learning rates must be positive");
        }
        if self.outer_step_size == 0 {
            return err("outer_step_size must be at least 1");
        }
        if !(self.outer_gamma > 0.0 && self.outer_gamma <= 1.0) {
            return err("outer_gamma must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.meta_batch_size == 0 {
            return err("batch sizes must be at least 1");
        }
        if !(self.meta_temperature > 0.0) {
            return err("meta_temperature must be positive");
        }
        if self.arch.hidden.is_empty() {
            return err("the scorer needs at least one hidden layer");
        }
        Ok(())
    }

    pub fn inner_optimizer(&self) -> InnerOptimizer {
        match self.inner_optimizer {
            InnerOptimizerKind::Sgd => InnerOptimizer::Sgd { lr: self.inner_lr },
            InnerOptimizerKind::Adamw => {
                InnerOptimizer::AdamW(AdamWConfig::new(self.inner_lr, self.inner_weight_decay))
            }
        }
    }

    fn outer_lr_at(&self, t: usize) -> f64 {
        step_decay_lr(self.outer_lr, self.outer_step_size, self.outer_gamma, t as u64)
    }
}

/// Learnable per-domain loss weights, all 1.0 at the start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainWeights(pub Vec<f64>);

impl DomainWeights {
    pub fn ones(k: usize) -> Self {
        Self(vec![1.0; k])
    }
}

/// Held-out domain used by the upper level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetaSet {
    pub trajectories: Vec<Trajectory>,
    /// Monte-Carlo labels of the same domain, for the per-step ablation.
    pub labeled: Vec<LabeledPrefix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean inner loss over the window's steps.
    pub inner_loss: f64,
    pub meta_loss: f64,
    pub alpha: Vec<f64>,
    pub inner_lr: f64,
    pub outer_lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub domains: Vec<String>,
    pub records: Vec<IterationRecord>,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iteration".to_string(), "inner_loss".into(), "meta_loss".into()];
        header.extend((1..=self.domains.len()).map(|k| format!("alpha_{k}")));
        header.extend(["inner_lr".to_string(), "outer_lr".into()]);
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.iteration.to_string(), r.inner_loss.to_string(), r.meta_loss.to_string()];
            row.extend(r.alpha.iter().map(f64::to_string));
            row.extend([r.inner_lr.to_string(), r.outer_lr.to_string()]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn final_alpha(&self) -> Option<&[f64]> {
        self.records.last().map(|r| r.alpha.as_slice())
    }

    /// Trailing mean of a per-iteration series over `window` records ending at `at`.
    pub fn smoothed(&self, at: usize, window: usize, pick: impl Fn(&IterationRecord) -> f64) -> f64 {
        let end = at.min(self.records.len() - 1) + 1;
        let start = end.saturating_sub(window);
        let slice = &self.records[start..end];
        slice.iter().map(pick).sum::<f64>() / slice.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub prm: PrmParams,
    pub alpha: Vec<f64>,
    pub history: TrainHistory,
    /// Snapshots every `checkpoint_every` outer iterations.
    pub checkpoints: Vec<Checkpoint>,
}

fn sample_batch(rng: &mut impl Rng, labels: &[LabeledPrefix], size: usize) -> PrefixBatch {
    if labels.is_empty() {
        return PrefixBatch::default();
    }
    PrefixBatch::from_labels((0..size).map(|_| &labels[rng.random_range(0..labels.len())]))
}

fn inner_batches(config: &TrainConfig, domains: &[LabeledDomain], iteration: usize) -> Vec<Vec<PrefixBatch>> {
    (0..config.unroll_steps)
        .map(|step| {
            domains
                .iter()
                .enumerate()
                .map(|(k, d)| {
                    let mut rng =
                        seed::rng(config.seed, &[seed::tag("inner-batch"), iteration as u64, step as u64, k as u64]);
                    sample_batch(&mut rng, &d.prefixes, config.batch_size)
                })
                .collect()
        })
        .collect()
}

enum MetaBatch<'a> {
    Afl(AflObjective<'a>),
    PerStep(PerStepObjective<'a>),
}

fn meta_batch<'a>(config: &'a TrainConfig, meta: &MetaSet, iteration: usize) -> MetaBatch<'a> {
    let mut rng = seed::rng(config.seed, &[seed::tag("meta-batch"), iteration as u64]);
    match config.upper_objective {
        UpperObjective::Afl => {
            let ts = &meta.trajectories;
            let picked: Vec<&Trajectory> =
                (0..config.meta_batch_size).map(|_| &ts[rng.random_range(0..ts.len())]).collect();
            MetaBatch::Afl(AflObjective {
                arch: &config.arch,
                batch: TrajectoryBatch::from_trajectories(picked),
                temperature: config.meta_temperature,
            })
        }
        UpperObjective::PerStep => {
            let steps = meta.trajectories.first().map_or(1, |t| t.steps.len());
            let batch = sample_batch(&mut rng, &meta.labeled, config.meta_batch_size * steps);
            MetaBatch::PerStep(PerStepObjective { arch: &config.arch, batch })
        }
    }
}

fn check_inputs(config: &TrainConfig, domains: &[LabeledDomain], meta: Option<&MetaSet>) -> Result<(), TrainError> {
    config.validate()?;
    if domains.is_empty() {
        return Err(TrainError::Config("at least one training domain is required".into()));
    }
    if let Some(d) = domains.iter().find(|d| d.prefixes.is_empty()) {
        return Err(TrainError::EmptyDomain(d.domain.clone()));
    }
    if let Some(m) = meta {
        let needs_labels = config.upper_objective == UpperObjective::PerStep;
        if m.trajectories.is_empty() || (needs_labels && m.labeled.is_empty()) {
            return Err(TrainError::EmptyMeta);
        }
    }
    Ok(())
}

fn guard(iteration: usize, threshold: f64, losses: impl IntoIterator<Item = f64>) -> Result<(), TrainError> {
    for loss in losses {
        if !loss.is_finite() || loss.abs() > threshold {
            return Err(TrainError::Diverged { iteration, loss });
        }
    }
    Ok(())
}

/// One lower-level step on the weighted loss with `alpha` held fixed.
pub fn inner_update(
    phi: &PrmParams,
    alpha: &[f64],
    batches: &[PrefixBatch],
    optimizer: &InnerOptimizer,
    state: &OptimizerState,
) -> Result<(PrmParams, OptimizerState, f64), AutodiffError> {
    let objective = WeightedTrainObjective { arch: &phi.arch, steps: vec![batches.to_vec()] };
    let (loss, grad) = inner_value_and_grad(&objective, 0, phi.params.values(), alpha)?;
    let (next, state, _) = apply_inner_step(optimizer, phi.params.values(), &grad, state);
    let params = phi.params.with_values(next)?;
    Ok((PrmParams { arch: phi.arch.clone(), params }, state, loss))
}

/// One AdamW step on the domain weights with the step-decayed learning rate
/// for outer iteration `t`.
pub fn outer_update(
    alpha: &[f64],
    hypergrad: &[f64],
    state: &OptimizerState,
    t: usize,
    config: &TrainConfig,
) -> Result<(Vec<f64>, OptimizerState), AutodiffError> {
    let cfg = AdamWConfig::new(config.outer_lr_at(t), config.outer_weight_decay);
    let (a, s) = adamw_step(&ParamVector::flat(alpha.to_vec()), &ParamVector::flat(hypergrad.to_vec()), state, &cfg)?;
    Ok((a.values().to_vec(), s))
}

fn meta_value(prm: &PrmParams, objective: &MetaBatch<'_>) -> f64 {
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(prm.params.values().to_vec(), prm.params.len(), 1);
    let out = match objective {
        MetaBatch::Afl(o) => o.loss(&mut tape, p),
        MetaBatch::PerStep(o) => o.loss(&mut tape, p),
    };
    tape.scalar(out)
}

/// Hooks called as training progresses, e.g. to persist partial results.
pub trait TrainObserver {
    fn on_iteration(&mut self, _record: &IterationRecord) {}
    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) {}
}

impl TrainObserver for () {}

fn record(
    config: &TrainConfig,
    rec: IterationRecord,
    prm: &PrmParams,
    alpha: &[f64],
    history: &mut TrainHistory,
    checkpoints: &mut Vec<Checkpoint>,
    observer: &mut dyn TrainObserver,
) {
    let t = rec.iteration;
    observer.on_iteration(&rec);
    history.records.push(rec);
    if config.checkpoint_every > 0 && (t + 1) % config.checkpoint_every == 0 {
        let ckpt = Checkpoint { prm: prm.clone(), alpha: alpha.to_vec(), training_step: (t + 1) as u64 };
        observer.on_checkpoint(&ckpt);
        checkpoints.push(ckpt);
    }
}

/// Bi-level training: `unroll_steps` inner updates, then one hypergradient
/// step on the domain weights, for `outer_iterations` rounds.
pub fn train_dreamprm(
    config: &TrainConfig,
    domains: &[LabeledDomain],
    meta: &MetaSet,
) -> Result<TrainOutcome, TrainError> {
    train_dreamprm_observed(config, domains, meta, &mut ())
}

pub fn train_dreamprm_observed(
    config: &TrainConfig,
    domains: &[LabeledDomain],
    meta: &MetaSet,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    check_inputs(config, domains, Some(meta))?;
    let k = domains.len();
    let optimizer = config.inner_optimizer();
    let mut prm = PrmParams::init(config.arch.clone(), config.seed);
    let mut alpha = DomainWeights::ones(k).0;
    let mut inner_state = OptimizerState::new(prm.params.len());
    let mut outer_state = OptimizerState::new(k);
    let mut history = TrainHistory { domains: domains.iter().map(|d| d.domain.clone()).collect(), records: Vec::new() };
    let mut checkpoints = Vec::new();

    for t in 0..config.outer_iterations {
        if config.inner_state == InnerStatePolicy::Reset {
            inner_state = OptimizerState::new(prm.params.len());
        }
        let inner = WeightedTrainObjective { arch: &config.arch, steps: inner_batches(config, domains, t) };
        let alpha_pv = ParamVector::flat(alpha.clone());
        let numerical = |source| TrainError::Numerical { iteration: t, source };
        let unrolled = match meta_batch(config, meta, t) {
            MetaBatch::Afl(m) => {
                hypergrad_unrolled(&inner, &m, &prm.params, &alpha_pv, config.unroll_steps, &optimizer, &inner_state)
            }
            MetaBatch::PerStep(m) => {
                hypergrad_unrolled(&inner, &m, &prm.params, &alpha_pv, config.unroll_steps, &optimizer, &inner_state)
            }
        }
        .map_err(|e| match e {
            AutodiffError::NonFiniteLoss { .. } | AutodiffError::NonFiniteMetaLoss => {
                TrainError::Diverged { iteration: t, loss: f64::NAN }
            }
            other => numerical(other),
        })?;
        guard(t, config.divergence_threshold, unrolled.inner_losses.iter().copied().chain([unrolled.meta_loss]))?;

        guard(t, config.divergence_threshold, unrolled.phi.values().iter().copied())?;
        prm = PrmParams { arch: config.arch.clone(), params: unrolled.phi };
        inner_state = unrolled.state;
        let outer_lr = config.outer_lr_at(t);
        let (next_alpha, next_state) =
            outer_update(&alpha, &unrolled.alpha_grad, &outer_state, t, config).map_err(numerical)?;
        guard(t, config.divergence_threshold, next_alpha.iter().copied())?;
        alpha = next_alpha;
        outer_state = next_state;

        let inner_loss = unrolled.inner_losses.iter().sum::<f64>() / unrolled.inner_losses.len() as f64;
        let rec = IterationRecord {
            iteration: t,
            inner_loss,
            meta_loss: unrolled.meta_loss,
            alpha: alpha.clone(),
            inner_lr: config.inner_lr,
            outer_lr,
        };
        record(config, rec, &prm, &alpha, &mut history, &mut checkpoints, observer);
    }
    Ok(TrainOutcome { prm, alpha, history, checkpoints })
}

/// Same loop with the weights frozen at 1.0 and no upper-level updates. The
/// meta loss is still evaluated each iteration for the history.
pub fn train_vanilla(
    config: &TrainConfig,
    domains: &[LabeledDomain],
    meta: Option<&MetaSet>,
) -> Result<TrainOutcome, TrainError> {
    train_vanilla_observed(config, domains, meta, &mut ())
}

pub fn train_vanilla_observed(
    config: &TrainConfig,
    domains: &[LabeledDomain],
    meta: Option<&MetaSet>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    check_inputs(config, domains, meta)?;
    let alpha = DomainWeights::ones(domains.len()).0;
    let optimizer = config.inner_optimizer();
    let mut prm = PrmParams::init(config.arch.clone(), config.seed);
    let mut state = OptimizerState::new(prm.params.len());
    let mut history = TrainHistory { domains: domains.iter().map(|d| d.domain.clone()).collect(), records: Vec::new() };
    let mut checkpoints = Vec::new();

    for t in 0..config.outer_iterations {
        if config.inner_state == InnerStatePolicy::Reset {
            state = OptimizerState::new(prm.params.len());
        }
        let mut losses = Vec::with_capacity(config.unroll_steps);
        for batches in inner_batches(config, domains, t) {
            let (next, next_state, loss) = inner_update(&prm, &alpha, &batches, &optimizer, &state)
                .map_err(|source| TrainError::Numerical { iteration: t, source })?;
            losses.push(loss);
            prm = next;
            state = next_state;
        }
        let meta_loss = meta.map_or(f64::NAN, |m| meta_value(&prm, &meta_batch(config, m, t)));
        guard(t, config.divergence_threshold, losses.iter().copied().chain(meta.map(|_| meta_loss)))?;
        guard(t, config.divergence_threshold, prm.params.values().iter().copied())?;
        let rec = IterationRecord {
            iteration: t,
            inner_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            meta_loss,
            alpha: alpha.clone(),
            inner_lr: config.inner_lr,
            outer_lr: 0.0,
        };
        record(config, rec, &prm, &alpha, &mut history, &mut checkpoints, observer);
    }
    Ok(TrainOutcome { prm, alpha, history, checkpoints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_domain, DomainSpec};
    use crate::supervision::label_dataset;

    fn small_config() -> TrainConfig {
        TrainConfig {
            outer_iterations: 20,
            unroll_steps: 3,
            batch_size: 8,
            meta_batch_size: 8,
            arch: PrmArch { hidden: vec![6], ..PrmArch::default() },
            checkpoint_every: 5,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn domains(specs: &[DomainSpec]) -> Vec<LabeledDomain> {
        specs.iter().map(|s| label_dataset(&generate_domain(s, 1).unwrap(), 8, 1).unwrap()).collect()
    }

    fn mixture() -> (Vec<LabeledDomain>, MetaSet) {
        let d = domains(&[
            DomainSpec::informative("a").with_questions(10),
            DomainSpec::informative("noisy").with_questions(10).with_label_noise(0.5),
        ]);
        let m = generate_domain(&DomainSpec::informative("meta").with_questions(10), 2).unwrap();
        let meta = MetaSet {
            trajectories: m.trajectories().cloned().collect(),
            labeled: label_dataset(&m, 8, 2).unwrap().prefixes,
        };
        (d, meta)
    }

    #[test]
    fn vanilla_weights_stay_at_one() {
        let (d, meta) = mixture();
        let out = train_vanilla(&small_config(), &d, Some(&meta)).unwrap();
        assert_eq!(out.history.records.len(), 20);
        assert!(out.history.records.iter().all(|r| r.alpha == vec![1.0, 1.0] && r.outer_lr == 0.0));
    }

    #[test]
    fn bilevel_moves_weights_and_is_deterministic() {
        let (d, meta) = mixture();
        let a = train_dreamprm(&small_config(), &d, &meta).unwrap();
        let b = train_dreamprm(&small_config(), &d, &meta).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.prm.params, b.prm.params);
        assert!(a.alpha.iter().all(|&x| x != 1.0));
        assert_eq!(a.checkpoints.iter().map(|c| c.training_step).collect::<Vec<_>>(), vec![5, 10, 15, 20]);
    }

    #[test]
    fn per_step_objective_runs() {
        let (d, meta) = mixture();
        let cfg = TrainConfig { upper_objective: UpperObjective::PerStep, ..small_config() };
        let out = train_dreamprm(&cfg, &d, &meta).unwrap();
        assert!(out.history.records.iter().all(|r| r.meta_loss.is_finite()));
        let empty = MetaSet { labeled: vec![], ..meta };
        assert!(matches!(train_dreamprm(&cfg, &d, &empty), Err(TrainError::EmptyMeta)));
    }

    #[test]
    fn divergence_names_iteration() {
        let (d, meta) = mixture();
        let cfg = TrainConfig { inner_optimizer: InnerOptimizerKind::Sgd, inner_lr: 1e9, ..small_config() };
        match train_dreamprm(&cfg, &d, &meta) {
            Err(TrainError::Diverged { iteration, .. }) => assert!(iteration < 20),
            other => panic!("expected divergence, got {other:?}"),
        }
        match train_vanilla(&cfg, &d, Some(&meta)) {
            Err(TrainError::Diverged { .. }) | Err(TrainError::Numerical { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn input_errors() {
        let (mut d, meta) = mixture();
        assert!(matches!(train_dreamprm(&TrainConfig { unroll_steps: 0, ..small_config() }, &d, &meta), Err(TrainError::Config(_))));
        d[1].prefixes.clear();
        assert!(matches!(train_dreamprm(&small_config(), &d, &meta), Err(TrainError::EmptyDomain(n)) if n == "noisy"));
        assert!(matches!(train_vanilla(&small_config(), &[], None), Err(TrainError::Config(_))));
    }

    #[test]
    fn single_domain_weight_only_scales_lr() {
        // With one domain and SGD, φ ← φ − β·α·∇L, so replaying the inner
        // steps with learning rate β·α_t reproduces the bi-level trajectory.
        let d = domains(&[DomainSpec::informative("only").with_questions(10)]);
        let m = generate_domain(&DomainSpec::informative("meta").with_questions(10), 2).unwrap();
        let meta = MetaSet { trajectories: m.trajectories().cloned().collect(), labeled: vec![] };
        let cfg = TrainConfig { inner_optimizer: InnerOptimizerKind::Sgd, inner_lr: 0.05, ..small_config() };
        let out = train_dreamprm(&cfg, &d, &meta).unwrap();

        let mut prm = PrmParams::init(cfg.arch.clone(), cfg.seed);
        let mut alpha = 1.0;
        let state = OptimizerState::new(prm.params.len());
        for (t, rec) in out.history.records.iter().enumerate() {
            let sgd = InnerOptimizer::Sgd { lr: cfg.inner_lr * alpha };
            for batches in inner_batches(&cfg, &d, t) {
                prm = inner_update(&prm, &[1.0], &batches, &sgd, &state).unwrap().0;
            }
            alpha = rec.alpha[0];
        }
        for (a, b) in prm.params.values().iter().zip(out.prm.params.values()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn reset_policy_changes_adamw_trajectory() {
        let (d, meta) = mixture();
        let persist = train_vanilla(&small_config(), &d, Some(&meta)).unwrap();
        let reset = train_vanilla(&TrainConfig { inner_state: InnerStatePolicy::Reset, ..small_config() }, &d, Some(&meta)).unwrap();
        assert_ne!(persist.prm.params, reset.prm.params);
    }

    #[test]
    fn outer_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.outer_lr_at(0), 0.01);
        assert_eq!(cfg.outer_lr_at(5000), 0.005);
        let (a, _) = outer_update(&[1.0], &[0.5], &OptimizerState::new(1), 0, &cfg).unwrap();
        // First AdamW step moves by ≈ lr against the gradient sign, plus decay.
        assert!((a[0] - (1.0 * (1.0 - 0.01 * 1e-3) - 0.01)).abs() < 1e-9);
    }

    #[test]
    fn history_csv_layout() {
        let (d, meta) = mixture();
        let out = train_dreamprm(&small_config(), &d, &meta).unwrap();
        let mut buf = Vec::new();
        out.history.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iteration,inner_loss,meta_loss,alpha_1,alpha_2,inner_lr,outer_lr");
        assert_eq!(lines.count(), 20);
    }

    #[test]
    fn full_scale_preset() {
        let p = TrainConfig::full_scale();
        assert_eq!((p.outer_iterations, p.inner_lr), (10_000, 5e-7));
        p.validate().unwrap();
    }
}
