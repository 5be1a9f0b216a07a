//! JSON-lines dataset files: one line per trajectory.
//!
//! ```text
//! {"schema_version":1,"domain":"geo","seed":7,"question_id":0,"trivial":false,
//!  "trajectory":0,"final_correct":true,"steps":[{"features":[...],"flawed":false}, ...]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DomainData, DomainSpec, Question, QuestionSample, SimError, Step, Trajectory};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StepRecord {
    features: Vec<f64>,
    flawed: bool,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    schema_version: u32,
    domain: String,
    seed: u64,
    question_id: u64,
    trivial: bool,
    trajectory: usize,
    final_correct: bool,
    steps: Vec<StepRecord>,
}

pub fn write_domain_jsonl(data: &DomainData, path: &Path) -> Result<(), SimError> {
    let mut out = BufWriter::new(File::create(path)?);
    for q in &data.questions {
        for (ti, t) in q.trajectories.iter().enumerate() {
            let rec = TrajectoryRecord {
                schema_version: DATASET_SCHEMA_VERSION,
                domain: data.spec.name.clone(),
                seed: data.seed,
                question_id: q.question.id,
                trivial: q.question.trivial,
                trajectory: ti,
                final_correct: t.final_correct,
                steps: t.steps.iter().map(|s| StepRecord { features: s.features.clone(), flawed: s.flawed }).collect(),
            };
            serde_json::to_writer(&mut out, &rec).map_err(|e| SimError::Json { line: 0, source: e })?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a file written by [`write_domain_jsonl`]. Lines of one question must
/// be contiguous.
pub fn read_domain_jsonl(path: &Path, spec: &DomainSpec) -> Result<DomainData, SimError> {
    let reader = BufReader::new(File::open(path)?);
    let mut questions: Vec<QuestionSample> = Vec::new();
    let mut seed = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| SimError::Json { line: lineno + 1, source: e })?;
        if rec.schema_version != DATASET_SCHEMA_VERSION {
            return Err(SimError::Schema { found: rec.schema_version, expected: DATASET_SCHEMA_VERSION });
        }
        seed = rec.seed;
        let steps = rec
            .steps
            .into_iter()
            .enumerate()
            .map(|(i, s)| Step { features: s.features, flawed: s.flawed, index: i + 1 })
            .collect();
        let traj = Trajectory { question_id: rec.question_id, steps, final_correct: rec.final_correct };
        match questions.last_mut() {
            Some(q) if q.question.id == rec.question_id => q.trajectories.push(traj),
            _ => questions.push(QuestionSample {
                question: Question { id: rec.question_id, trivial: rec.trivial },
                trajectories: vec![traj],
            }),
        }
    }
    Ok(DomainData { spec: spec.clone(), seed, questions })
}
