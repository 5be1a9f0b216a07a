//! Synthetic reasoning simulator.
//!
//! Stands in for a generator model and its datasets. A question yields
//! trajectories of `n` steps; each step is flawed with probability
//! `flaw_rate`, and a completion from a prefix containing `f` flawed steps is
//! correct with probability `q0 · ρ^f`. Step features expose the flaw flag and
//! the normalized position, both perturbed by Gaussian noise.

mod io;

pub use io::{read_domain_jsonl, write_domain_jsonl, DATASET_SCHEMA_VERSION};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

/// Per-step feature dimension.
pub const FEATURE_DIM: usize = 8;
/// Feature carrying the flaw indicator.
pub const FLAW_DIM: usize = 0;
/// Feature carrying `i / n`.
pub const POSITION_DIM: usize = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid domain spec `{domain}`: {field} {reason}")]
    InvalidSpec { domain: String, field: &'static str, reason: String },
    #[error("prefix of length {len} is already a complete trajectory")]
    PrefixComplete { len: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json (line {line}): {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("dataset schema version {found} is not supported (expected {expected})")]
    Schema { found: u32, expected: u32 },
}

/// Generator knobs for one synthetic domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub num_questions: usize,
    pub steps_per_trajectory: usize,
    #[serde(default = "default_trajectories")]
    pub trajectories_per_question: usize,
    pub flaw_rate: f64,
    pub label_noise: f64,
    pub triviality: f64,
    pub feature_noise_sigma: f64,
    /// `q0`: solve probability of a flawless prefix.
    pub base_solve_prob: f64,
    /// `ρ`: multiplicative penalty per flawed step.
    pub flaw_decay: f64,
}

fn default_trajectories() -> usize {
    8
}

impl DomainSpec {
    /// Clean domain: flaws matter, no label noise, no trivial questions.
    pub fn informative(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            num_questions: 1000,
            steps_per_trajectory: 5,
            trajectories_per_question: 8,
            flaw_rate: 0.3,
            label_noise: 0.0,
            triviality: 0.0,
            feature_noise_sigma: 0.3,
            base_solve_prob: 0.9,
            flaw_decay: 0.3,
        }
    }

    pub fn with_label_noise(mut self, p: f64) -> Self {
        self.label_noise = p;
        self
    }

    pub fn with_triviality(mut self, p: f64) -> Self {
        self.triviality = p;
        self
    }

    pub fn with_questions(mut self, n: usize) -> Self {
        self.num_questions = n;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |field, reason: &str| {
            Err(SimError::InvalidSpec { domain: self.name.clone(), field, reason: reason.to_string() })
        };
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.num_questions == 0 {
            return bad("num_questions", "must be at least 1");
        }
        if self.steps_per_trajectory == 0 {
            return bad("steps_per_trajectory", "must be at least 1");
        }
        if self.trajectories_per_question == 0 {
            return bad("trajectories_per_question", "must be at least 1");
        }
        if !unit(self.flaw_rate) {
            return bad("flaw_rate", "must lie in [0, 1]");
        }
        if !unit(self.label_noise) {
            return bad("label_noise", "must lie in [0, 1]");
        }
        if !unit(self.triviality) {
            return bad("triviality", "must lie in [0, 1]");
        }
        if !(self.feature_noise_sigma >= 0.0 && self.feature_noise_sigma.is_finite()) {
            return bad("feature_noise_sigma", "must be finite and non-negative");
        }
        if !(self.base_solve_prob > 0.0 && self.base_solve_prob <= 1.0) {
            return bad("base_solve_prob", "must lie in (0, 1]");
        }
        if !(self.flaw_decay > 0.0 && self.flaw_decay < 1.0) {
            return bad("flaw_decay", "must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub features: Vec<f64>,
    /// Latent; never shown to the scorer.
    pub flawed: bool,
    /// 1-based position in the trajectory.
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: u64,
    pub steps: Vec<Step>,
    pub final_correct: bool,
}

impl Trajectory {
    pub fn flaw_count(&self) -> usize {
        self.steps.iter().filter(|s| s.flawed).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: u64,
    /// Every completion is correct regardless of flaws.
    pub trivial: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuestionSample {
    pub question: Question,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainData {
    pub spec: DomainSpec,
    pub seed: u64,
    pub questions: Vec<QuestionSample>,
}

impl DomainData {
    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.questions.iter().flat_map(|q| q.trajectories.iter())
    }
}

/// Completion model for one question.
#[derive(Clone, Debug, PartialEq)]
pub struct Completer {
    /// `q0`
    pub solve_prob: f64,
    /// `ρ`
    pub flaw_decay: f64,
    /// Probability the recorded outcome of a completion is flipped.
    pub observation_noise: f64,
    pub steps_per_trajectory: usize,
    pub feature_noise_sigma: f64,
}

impl Completer {
    pub fn new(solve_prob: f64, flaw_decay: f64, steps_per_trajectory: usize) -> Self {
        Self { solve_prob, flaw_decay, observation_noise: 0.0, steps_per_trajectory, feature_noise_sigma: 0.0 }
    }

    /// Completer for a question drawn from `spec`. Trivial questions always
    /// complete correctly.
    pub fn for_question(spec: &DomainSpec, question: &Question) -> Self {
        let (q0, rho) = if question.trivial { (1.0, 1.0) } else { (spec.base_solve_prob, spec.flaw_decay) };
        Self {
            solve_prob: q0,
            flaw_decay: rho,
            observation_noise: spec.label_noise,
            steps_per_trajectory: spec.steps_per_trajectory,
            feature_noise_sigma: spec.feature_noise_sigma,
        }
    }
}

fn sample_step<R: Rng>(rng: &mut R, flawed: bool, index: usize, n: usize, sigma: f64) -> Step {
    let mut features = vec![0.0; FEATURE_DIM];
    features[FLAW_DIM] = if flawed { 1.0 } else { 0.0 };
    features[POSITION_DIM] = index as f64 / n as f64;
    if sigma > 0.0 {
        for f in &mut features {
            let z: f64 = rng.sample(StandardNormal);
            *f += sigma * z;
        }
    }
    Step { features, flawed, index }
}

fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// `q0 · ρ^f`, `f` the number of flawed steps in the prefix, clipped to [0, 1].
pub fn true_correctness_prob(completer: &Completer, prefix: &[Step]) -> f64 {
    let f = prefix.iter().filter(|s| s.flawed).count();
    (completer.solve_prob * completer.flaw_decay.powi(f as i32)).clamp(0.0, 1.0)
}

/// Samples the remaining steps after `prefix` and the final outcome.
///
/// Continuation steps are clean; the outcome is drawn with
/// [`true_correctness_prob`] of the prefix and then flipped with probability
/// `observation_noise`.
pub fn complete_from_prefix(
    completer: &Completer,
    question_id: u64,
    prefix: &[Step],
    seed: u64,
) -> Result<Trajectory, SimError> {
    let n = completer.steps_per_trajectory;
    if prefix.len() >= n {
        return Err(SimError::PrefixComplete { len: prefix.len() });
    }
    let mut rng = seed::rng(seed, &[]);
    let mut correct = bernoulli(&mut rng, true_correctness_prob(completer, prefix));
    if completer.observation_noise > 0.0 && bernoulli(&mut rng, completer.observation_noise) {
        correct = !correct;
    }
    let mut steps = prefix.to_vec();
    for index in prefix.len() + 1..=n {
        steps.push(sample_step(&mut rng, false, index, n, completer.feature_noise_sigma));
    }
    Ok(Trajectory { question_id, steps, final_correct: correct })
}

/// Draws one question and its trajectories. Pure in `(spec, seed, id)`.
pub fn generate_question(spec: &DomainSpec, seed: u64, id: u64) -> QuestionSample {
    let mut rng = seed::rng(seed, &[seed::tag(&spec.name), id]);
    let trivial = bernoulli(&mut rng, spec.triviality);
    let question = Question { id, trivial };
    let n = spec.steps_per_trajectory;
    let trajectories = (0..spec.trajectories_per_question)
        .map(|_| {
            let steps: Vec<Step> = (1..=n)
                .map(|i| {
                    let flawed = bernoulli(&mut rng, spec.flaw_rate);
                    sample_step(&mut rng, flawed, i, n, spec.feature_noise_sigma)
                })
                .collect();
            let f = steps.iter().filter(|s| s.flawed).count();
            let mut correct = trivial || bernoulli(&mut rng, spec.base_solve_prob * spec.flaw_decay.powi(f as i32));
            if bernoulli(&mut rng, spec.label_noise) {
                correct = !correct;
            }
            Trajectory { question_id: id, steps, final_correct: correct }
        })
        .collect();
    QuestionSample { question, trajectories }
}

pub fn generate_domain(spec: &DomainSpec, seed: u64) -> Result<DomainData, SimError> {
    spec.validate()?;
    let questions = (0..spec.num_questions as u64).map(|id| generate_question(spec, seed, id)).collect();
    Ok(DomainData { spec: spec.clone(), seed, questions })
}
