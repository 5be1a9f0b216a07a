//! Best-of-N selection, baselines, and evaluation reports.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prm::{aggregate, score_step, score_trajectory, PrmError, PrmParams};
use crate::seed;
use crate::sim::{QuestionSample, Trajectory};

/// Budgets reported by [`evaluate`].
pub const K_VALUES: [usize; 5] = [1, 2, 4, 6, 8];
/// Answer id shared by every correct candidate.
pub const CORRECT_ANSWER: u32 = 0;
/// Incorrect candidates draw their answer uniformly from `1..=DISTRACTORS`.
pub const DISTRACTORS: u32 = 4;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("candidate set is empty")]
    Empty,
    #[error("k = {k} is outside 1..={n}")]
    BadK { k: usize, n: usize },
    #[error("candidate {index} answers question {found}, expected {expected}")]
    MixedQuestions { index: usize, expected: u64, found: u64 },
    #[error("{answers} answers for {candidates} candidates")]
    AnswerCount { answers: usize, candidates: usize },
    #[error(transparent)]
    Prm(#[from] PrmError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub question_id: u64,
    pub candidates: Vec<Trajectory>,
    pub answers: Vec<u32>,
}

impl CandidateSet {
    pub fn new(question_id: u64, candidates: Vec<Trajectory>, answers: Vec<u32>) -> Result<Self, SelectError> {
        if candidates.is_empty() {
            return Err(SelectError::Empty);
        }
        if answers.len() != candidates.len() {
            return Err(SelectError::AnswerCount { answers: answers.len(), candidates: candidates.len() });
        }
        if let Some((index, c)) = candidates.iter().enumerate().find(|(_, c)| c.question_id != question_id) {
            return Err(SelectError::MixedQuestions { index, expected: question_id, found: c.question_id });
        }
        Ok(Self { question_id, candidates, answers })
    }

    /// Wraps a generated question, attaching synthetic answer ids.
    pub fn from_sample(sample: &QuestionSample, seed: u64) -> Result<Self, SelectError> {
        let mut rng = seed::rng(seed, &[seed::tag("answers"), sample.question.id]);
        let answers = sample
            .trajectories
            .iter()
            .map(|t| if t.final_correct { CORRECT_ANSWER } else { rng.random_range(1..=DISTRACTORS) })
            .collect();
        Self::new(sample.question.id, sample.trajectories.clone(), answers)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    fn check_k(&self, k: usize) -> Result<(), SelectError> {
        if self.candidates.is_empty() {
            return Err(SelectError::Empty);
        }
        if k == 0 || k > self.len() {
            return Err(SelectError::BadK { k, n: self.len() });
        }
        Ok(())
    }

    /// Whether any of the first `k` candidates is correct.
    pub fn pass_at(&self, k: usize) -> bool {
        self.candidates.iter().take(k).any(|c| c.final_correct)
    }
}

/// Anything that assigns per-step scores in (0, 1) to a trajectory.
pub trait StepScorer {
    fn score_steps(&self, t: &Trajectory) -> Result<Vec<f64>, PrmError>;
}

impl StepScorer for PrmParams {
    fn score_steps(&self, t: &Trajectory) -> Result<Vec<f64>, PrmError> {
        score_trajectory(self, t)
    }
}

/// Scores every step 0.9 on correct trajectories and 0.1 otherwise.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleScorer;

impl StepScorer for OracleScorer {
    fn score_steps(&self, t: &Trajectory) -> Result<Vec<f64>, PrmError> {
        let s = if t.final_correct { 0.9 } else { 0.1 };
        Ok(vec![s; t.steps.len()])
    }
}

fn argmax(scores: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.into_iter().enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

/// Index of the first-`k` candidate with the highest aggregated score.
pub fn best_of_n<S: StepScorer + ?Sized>(scorer: &S, set: &CandidateSet, k: usize) -> Result<usize, SelectError> {
    set.check_k(k)?;
    let scores = set.candidates[..k]
        .iter()
        .map(|c| aggregate(&scorer.score_steps(c)?))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(argmax(scores))
}

/// Majority answer among the first `k` candidates.
pub fn self_consistency(set: &CandidateSet, k: usize) -> Result<u32, SelectError> {
    set.check_k(k)?;
    let answers = &set.answers[..k];
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &a in answers {
        *counts.entry(a).or_default() += 1;
    }
    let mut best = answers[0];
    for &a in answers {
        if counts[&a] > counts[&best] {
            best = a;
        }
    }
    Ok(best)
}

/// Index chosen by a final-step-only scorer.
pub fn orm_select(orm: &PrmParams, set: &CandidateSet, k: usize) -> Result<usize, SelectError> {
    set.check_k(k)?;
    let scores = set.candidates[..k]
        .iter()
        .map(|c| score_step(orm, &c.steps, c.steps.len()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(argmax(scores))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionSelection {
    pub question_id: u64,
    /// Selected candidate per budget, in `K_VALUES` order.
    pub prm: Vec<usize>,
    pub self_consistency: Vec<u32>,
    pub orm: Option<Vec<usize>>,
    pub correct: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_questions: usize,
    pub k_values: Vec<usize>,
    pub pass_at_1: f64,
    /// Fraction of questions with a correct candidate among the first k.
    pub pass_at_k: Vec<f64>,
    pub select_at_k: Vec<f64>,
    pub self_consistency: Vec<f64>,
    pub orm: Option<Vec<f64>>,
    pub per_question: Vec<QuestionSelection>,
}

impl EvalReport {
    pub fn select_at(&self, k: usize) -> Option<f64> {
        self.k_values.iter().position(|&x| x == k).map(|i| self.select_at_k[i])
    }

    pub fn orm_at(&self, k: usize) -> Option<f64> {
        let i = self.k_values.iter().position(|&x| x == k)?;
        self.orm.as_ref().map(|v| v[i])
    }

    /// 0/1 outcome per question of the scorer's pick at budget `k`.
    pub fn select_outcomes(&self, k: usize) -> Option<Vec<f64>> {
        let i = self.k_values.iter().position(|&x| x == k)?;
        Some(self.per_question.iter().map(|q| q.correct[q.prm[i]] as u8 as f64).collect())
    }

    /// 0/1 outcome per question of the first candidate.
    pub fn pass_at_1_outcomes(&self) -> Vec<f64> {
        self.per_question.iter().map(|q| q.correct[0] as u8 as f64).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per method and budget: `method,k,accuracy`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "k", "accuracy"])?;
        let mut series = vec![
            ("pass_at_k", &self.pass_at_k),
            ("prm_select", &self.select_at_k),
            ("self_consistency", &self.self_consistency),
        ];
        if let Some(orm) = &self.orm {
            series.push(("orm_select", orm));
        }
        for (name, values) in series {
            for (k, acc) in self.k_values.iter().zip(values.iter()) {
                w.write_record([name.to_string(), k.to_string(), acc.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every method on the same candidate sets.
pub fn evaluate<S: StepScorer + ?Sized>(
    scorer: &S,
    orm: Option<&PrmParams>,
    sets: &[CandidateSet],
) -> Result<EvalReport, SelectError> {
    let ks: Vec<usize> = K_VALUES.to_vec();
    let mut per_question = Vec::with_capacity(sets.len());
    for set in sets {
        let budgets: Vec<usize> = ks.iter().map(|&k| k.min(set.len())).collect();
        per_question.push(QuestionSelection {
            question_id: set.question_id,
            prm: budgets.iter().map(|&k| best_of_n(scorer, set, k)).collect::<Result<_, _>>()?,
            self_consistency: budgets.iter().map(|&k| self_consistency(set, k)).collect::<Result<_, _>>()?,
            orm: orm.map(|o| budgets.iter().map(|&k| orm_select(o, set, k)).collect::<Result<_, _>>()).transpose()?,
            correct: set.candidates.iter().map(|c| c.final_correct).collect(),
        });
    }
    let n = sets.len().max(1) as f64;
    let rate = |f: &dyn Fn(&CandidateSet, &QuestionSelection, usize) -> bool| -> Vec<f64> {
        (0..ks.len())
            .map(|i| sets.iter().zip(&per_question).filter(|(s, q)| f(s, q, i)).count() as f64 / n)
            .collect()
    };
    let pass_at_k = rate(&|s, _, i| s.pass_at(ks[i]));
    let select_at_k = rate(&|_, q, i| q.correct[q.prm[i]]);
    let sc = rate(&|_, q, i| q.self_consistency[i] == CORRECT_ANSWER);
    let orm_acc = orm.map(|_| rate(&|_, q, i| q.orm.as_ref().is_some_and(|o| q.correct[o[i]])));
    Ok(EvalReport {
        num_questions: sets.len(),
        pass_at_1: pass_at_k[0],
        k_values: ks,
        pass_at_k,
        select_at_k,
        self_consistency: sc,
        orm: orm_acc,
        per_question,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub mean_diff: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Percentile interval (`level`, e.g. 0.95) for `mean(a − b)` from paired
/// resampling of questions.
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, level: f64, seed: u64) -> Bootstrap {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    assert!(!a.is_empty(), "paired samples must be nonempty");
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let mean_diff = diffs.iter().sum::<f64>() / n as f64;
    let mut rng = seed::rng(seed, &[seed::tag("bootstrap")]);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    Bootstrap { mean_diff, lower: at(tail), upper: at(1.0 - tail) }
}
