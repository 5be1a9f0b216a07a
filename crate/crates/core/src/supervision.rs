//! Monte-Carlo process supervision.
//!
//! A prefix is labeled with the fraction of sampled completions from it that
//! end correct. Questions whose labels are uniformly 0 or uniformly 1 carry no
//! training signal and can be dropped before training.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::sim::{complete_from_prefix, Completer, DomainData, SimError, Step, Trajectory};

pub const LABELS_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ROLLOUTS: u32 = 8;

#[derive(Debug, Error)]
pub enum SupervisionError {
    #[error("dynamic filter needs at least one labeled prefix")]
    EmptyQuestion,
    #[error("num_rollouts must be at least 1")]
    NoRollouts,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json (line {line}): {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("label schema version {found} is not supported (expected {expected})")]
    Schema { found: u32, expected: u32 },
}

/// One supervision unit: a trajectory prefix and its Monte-Carlo label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrefix {
    pub question_id: u64,
    pub trajectory: usize,
    /// `i`, number of steps in the prefix.
    pub prefix_len: usize,
    /// `n`, length of a complete trajectory.
    pub steps_total: usize,
    /// Features of steps `1..=i`.
    pub features: Vec<Vec<f64>>,
    /// Correct completions over total completions.
    pub p: f64,
    pub correct: u32,
    pub num_rollouts: u32,
}

/// Labeled prefixes of one domain plus provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDomain {
    pub domain: String,
    pub seed: u64,
    pub num_rollouts: u32,
    pub prefixes: Vec<LabeledPrefix>,
}

impl LabeledDomain {
    /// Only complete-trajectory prefixes, the outcome-level training set.
    pub fn final_only(&self) -> LabeledDomain {
        LabeledDomain {
            prefixes: self.prefixes.iter().filter(|p| p.prefix_len == p.steps_total).cloned().collect(),
            ..self.clone()
        }
    }

    pub fn question_count(&self) -> usize {
        let mut ids: Vec<u64> = self.prefixes.iter().map(|p| p.question_id).collect();
        ids.dedup();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

fn prefix_features(prefix: &[Step]) -> Vec<Vec<f64>> {
    prefix.iter().map(|s| s.features.clone()).collect()
}

/// Runs `num_rollouts` completions from `prefix` and records the correct ratio.
pub fn monte_carlo_label(
    completer: &Completer,
    question_id: u64,
    prefix: &[Step],
    num_rollouts: u32,
    seed: u64,
) -> Result<LabeledPrefix, SupervisionError> {
    if num_rollouts == 0 {
        return Err(SupervisionError::NoRollouts);
    }
    let mut correct = 0;
    for r in 0..num_rollouts {
        let t = complete_from_prefix(completer, question_id, prefix, seed::derive_seed(seed, &[r as u64]))?;
        correct += t.final_correct as u32;
    }
    Ok(LabeledPrefix {
        question_id,
        trajectory: 0,
        prefix_len: prefix.len(),
        steps_total: completer.steps_per_trajectory,
        features: prefix_features(prefix),
        p: correct as f64 / num_rollouts as f64,
        correct,
        num_rollouts,
    })
}

/// Label of the full trajectory: its answer is fixed, so every "rollout"
/// agrees with the recorded outcome.
fn terminal_label(t: &Trajectory, trajectory: usize, num_rollouts: u32) -> LabeledPrefix {
    let correct = if t.final_correct { num_rollouts } else { 0 };
    LabeledPrefix {
        question_id: t.question_id,
        trajectory,
        prefix_len: t.steps.len(),
        steps_total: t.steps.len(),
        features: prefix_features(&t.steps),
        p: if t.final_correct { 1.0 } else { 0.0 },
        correct,
        num_rollouts,
    }
}

/// One label per step index of every trajectory in the domain.
pub fn label_dataset(domain: &DomainData, num_rollouts: u32, seed: u64) -> Result<LabeledDomain, SupervisionError> {
    if num_rollouts == 0 {
        return Err(SupervisionError::NoRollouts);
    }
    let dtag = seed::tag(&domain.spec.name);
    let mut prefixes = Vec::new();
    for q in &domain.questions {
        let completer = Completer::for_question(&domain.spec, &q.question);
        for (ti, t) in q.trajectories.iter().enumerate() {
            let n = t.steps.len();
            for i in 1..n {
                let s = seed::derive_seed(seed, &[dtag, q.question.id, ti as u64, i as u64]);
                let mut label = monte_carlo_label(&completer, q.question.id, &t.steps[..i], num_rollouts, s)?;
                label.trajectory = ti;
                prefixes.push(label);
            }
            prefixes.push(terminal_label(t, ti, num_rollouts));
        }
    }
    Ok(LabeledDomain { domain: domain.spec.name.clone(), seed, num_rollouts, prefixes })
}

/// `false` when every label of the question is 0, or every label is 1.
pub fn dynamic_filter(labels_for_question: &[LabeledPrefix]) -> Result<bool, SupervisionError> {
    if labels_for_question.is_empty() {
        return Err(SupervisionError::EmptyQuestion);
    }
    let all_zero = labels_for_question.iter().all(|l| l.correct == 0);
    let all_one = labels_for_question.iter().all(|l| l.correct == l.num_rollouts);
    Ok(!(all_zero || all_one))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub kept: usize,
    pub discarded: usize,
}

impl FilterStats {
    pub fn discard_rate(&self) -> f64 {
        let total = self.kept + self.discarded;
        if total == 0 {
            0.0
        } else {
            self.discarded as f64 / total as f64
        }
    }
}

/// Applies [`dynamic_filter`] per question, pooling all its trajectories.
pub fn filter_questions(labeled: &LabeledDomain) -> (LabeledDomain, FilterStats) {
    let mut by_q: BTreeMap<u64, Vec<&LabeledPrefix>> = BTreeMap::new();
    for p in &labeled.prefixes {
        by_q.entry(p.question_id).or_default().push(p);
    }
    let mut stats = FilterStats::default();
    let mut keep_ids = std::collections::BTreeSet::new();
    for (id, labels) in &by_q {
        let owned: Vec<LabeledPrefix> = labels.iter().map(|l| (*l).clone()).collect();
        if dynamic_filter(&owned).expect("grouped labels are nonempty") {
            stats.kept += 1;
            keep_ids.insert(*id);
        } else {
            stats.discarded += 1;
        }
    }
    let prefixes = labeled.prefixes.iter().filter(|p| keep_ids.contains(&p.question_id)).cloned().collect();
    (LabeledDomain { prefixes, ..labeled.clone() }, stats)
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    schema_version: u32,
    domain: String,
    seed: u64,
    #[serde(flatten)]
    prefix: LabeledPrefix,
}

pub fn write_labels_jsonl(labeled: &LabeledDomain, path: &Path) -> Result<(), SupervisionError> {
    let mut out = BufWriter::new(File::create(path)?);
    for p in &labeled.prefixes {
        let rec = LabelRecord {
            schema_version: LABELS_SCHEMA_VERSION,
            domain: labeled.domain.clone(),
            seed: labeled.seed,
            prefix: p.clone(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| SupervisionError::Json { line: 0, source: e })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads labels written by [`write_labels_jsonl`]. An empty file yields an
/// empty domain named `fallback_name`.
pub fn read_labels_jsonl(path: &Path, fallback_name: &str) -> Result<LabeledDomain, SupervisionError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = LabeledDomain { domain: fallback_name.to_string(), seed: 0, num_rollouts: 0, prefixes: Vec::new() };
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord =
            serde_json::from_str(&line).map_err(|e| SupervisionError::Json { line: lineno + 1, source: e })?;
        if rec.schema_version != LABELS_SCHEMA_VERSION {
            return Err(SupervisionError::Schema { found: rec.schema_version, expected: LABELS_SCHEMA_VERSION });
        }
        out.domain = rec.domain;
        out.seed = rec.seed;
        out.num_rollouts = rec.prefix.num_rollouts;
        out.prefixes.push(rec.prefix);
    }
    Ok(out)
}
