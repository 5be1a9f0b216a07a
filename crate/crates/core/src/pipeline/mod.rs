//! End-to-end experiment driver: simulate, label, train, evaluate, report.
//!
//! Every stage reads the previous stage's files from the run directory, so
//! stages can be rerun independently.

mod manifest;
mod report;
mod svg;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bilevel::{
    train_dreamprm_observed, train_vanilla_observed, IterationRecord, MetaSet, TrainConfig, TrainError,
    TrainHistory, TrainObserver, UpperObjective,
};
use crate::prm::{read_checkpoint, write_checkpoint, Checkpoint, PrmError, PrmParams};
use crate::select::{evaluate, CandidateSet, EvalReport, SelectError};
use crate::seed;
use crate::sim::{generate_domain, read_domain_jsonl, write_domain_jsonl, DomainData, DomainSpec, SimError};
use crate::supervision::{
    filter_questions, label_dataset, read_labels_jsonl, write_labels_jsonl, FilterStats, LabeledDomain,
    SupervisionError, DEFAULT_ROLLOUTS,
};

pub use manifest::{build_manifest, config_hash, Manifest, MANIFEST_FILE};
pub use report::{report, ReportFiles};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "DREAMPRM_SEED";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifact(Vec<String>),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Supervision(#[from] SupervisionError),
    #[error(transparent)]
    Prm(#[from] PrmError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error("training failed: {0}")]
    Train(String),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// Process exit status for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Diverged(_) => 3,
            PipelineError::MissingArtifact(_) => 4,
            _ => 1,
        }
    }
}

impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => PipelineError::Config(format!("train: {m}")),
            e @ (TrainError::Diverged { .. } | TrainError::Numerical { .. }) => PipelineError::Diverged(e.to_string()),
            e => PipelineError::Train(e.to_string()),
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    Dreamprm,
    Vanilla,
    /// Bi-level training with the per-step upper objective.
    NoAfl,
    /// Only the final-step outcome model.
    OrmOnly,
}

impl FromStr for Variant {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "DREAMPRM" => Ok(Variant::Dreamprm),
            "VANILLA" => Ok(Variant::Vanilla),
            "NO_AFL" => Ok(Variant::NoAfl),
            "ORM_ONLY" => Ok(Variant::OrmOnly),
            _ => Err(PipelineError::Config(format!(
                "variant: unknown `{s}` (expected DREAMPRM, VANILLA, NO_AFL or ORM_ONLY)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Dreamprm => "DREAMPRM",
            Variant::Vanilla => "VANILLA",
            Variant::NoAfl => "NO_AFL",
            Variant::OrmOnly => "ORM_ONLY",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Simulate,
    Label,
    Train,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Simulate, Stage::Label, Stage::Train, Stage::Evaluate, Stage::Report];

    /// Parses a comma-separated list; `all` expands to every stage.
    pub fn parse_list(s: &str) -> Result<Vec<Stage>, PipelineError> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "all" => out.extend(Stage::ALL),
                "simulate" => out.push(Stage::Simulate),
                "label" => out.push(Stage::Label),
                "train" => out.push(Stage::Train),
                "evaluate" => out.push(Stage::Evaluate),
                "report" => out.push(Stage::Report),
                other => return Err(PipelineError::Config(format!("stages: unknown stage `{other}`"))),
            }
        }
        if out.is_empty() {
            return Err(PipelineError::Config("stages: no stage given".into()));
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingConfig {
    pub num_rollouts: u32,
    /// Drop questions whose labels are all 0 or all 1.
    pub dynamic_filter: bool,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self { num_rollouts: DEFAULT_ROLLOUTS, dynamic_filter: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    /// Also train and score the final-step outcome model.
    pub include_orm: bool,
    pub bootstrap_resamples: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { include_orm: true, bootstrap_resamples: 2000 }
    }
}

/// Missing keys take their [`Default`] values; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub variant: Variant,
    pub out_dir: PathBuf,
    pub domains: Vec<DomainSpec>,
    pub meta: DomainSpec,
    pub test: DomainSpec,
    pub labeling: LabelingConfig,
    pub train: TrainConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for ExperimentConfig {
    /// Two informative domains, one with 50% label noise, one 90% trivial,
    /// plus a clean meta domain and a clean test domain.
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            variant: Variant::Dreamprm,
            out_dir: PathBuf::from("runs/default"),
            domains: vec![
                DomainSpec::informative("informative_a"),
                DomainSpec::informative("informative_b"),
                DomainSpec::informative("label_noisy").with_label_noise(0.5),
                DomainSpec::informative("trivial").with_triviality(0.9),
            ],
            meta: DomainSpec::informative("meta"),
            test: DomainSpec::informative("test"),
            labeling: LabelingConfig::default(),
            train: TrainConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Applies `DREAMPRM_SEED` if set.
    pub fn apply_env(&mut self) -> Result<(), PipelineError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| PipelineError::Config(format!("{SEED_ENV}: `{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// Settings actually used for training: the run seed and the variant's
    /// upper objective override the `train` section.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = seed::derive_seed(self.seed, &[seed::tag("train")]);
        if self.variant == Variant::NoAfl {
            t.upper_objective = UpperObjective::PerStep;
        }
        t
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let field = |name: String, msg: String| Err(PipelineError::Config(format!("{name}: {msg}")));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return field("schema_version".into(), format!("expected {CONFIG_SCHEMA_VERSION}, found {}", self.schema_version));
        }
        if self.domains.is_empty() {
            return field("domains".into(), "at least one training domain is required".into());
        }
        let mut names: Vec<&str> = self.domains.iter().map(|d| d.name.as_str()).collect();
        names.extend([self.meta.name.as_str(), self.test.name.as_str()]);
        let mut sorted = names.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return field("domains".into(), format!("duplicate domain name `{}`", w[0]));
        }
        for (i, d) in self.domains.iter().enumerate() {
            if let Err(e) = d.validate() {
                return field(format!("domains[{i}]"), e.to_string());
            }
        }
        for (name, d) in [("meta", &self.meta), ("test", &self.test)] {
            if let Err(e) = d.validate() {
                return field(name.into(), e.to_string());
            }
        }
        if !self.domains.iter().chain([&self.meta]).all(|d| d.steps_per_trajectory == self.test.steps_per_trajectory) {
            return field("domains".into(), "steps_per_trajectory must agree across all domains".into());
        }
        if self.labeling.num_rollouts == 0 {
            return field("labeling.num_rollouts".into(), "must be at least 1".into());
        }
        if self.evaluation.bootstrap_resamples == 0 {
            return field("evaluation.bootstrap_resamples".into(), "must be at least 1".into());
        }
        self.train.validate().map_err(|e| PipelineError::Config(format!("train: {e}")))?;
        if self.out_dir.as_os_str().is_empty() {
            return field("out_dir".into(), "must not be empty".into());
        }
        Ok(())
    }
}

/// Paths of a run directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn dataset(&self, domain: &str) -> PathBuf {
        self.root.join("data").join(format!("{domain}.jsonl"))
    }
    pub fn labels(&self, domain: &str) -> PathBuf {
        self.root.join("labels").join(format!("{domain}.jsonl"))
    }
    pub fn filter_stats(&self) -> PathBuf {
        self.root.join("labels").join("filter_stats.json")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }
    pub fn orm(&self) -> PathBuf {
        self.root.join("orm.ckpt")
    }
    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("step_{step:06}.ckpt"))
    }
    pub fn history(&self) -> PathBuf {
        self.root.join("history.csv")
    }
    pub fn eval_json(&self) -> PathBuf {
        self.root.join("eval_report.json")
    }
    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("eval_report.csv")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn ensure_parent(path: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(io_err(path))
}

fn require(paths: &[PathBuf]) -> Result<(), PipelineError> {
    let missing: Vec<String> = paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact(missing))
    }
}

fn label_seed(cfg: &ExperimentConfig) -> u64 {
    seed::derive_seed(cfg.seed, &[seed::tag("label")])
}

pub fn stage_simulate(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<(), PipelineError> {
    for spec in cfg.domains.iter().chain([&cfg.meta, &cfg.test]) {
        let path = layout.dataset(&spec.name);
        ensure_parent(&path)?;
        write_domain_jsonl(&generate_domain(spec, cfg.seed)?, &path)?;
    }
    Ok(())
}

fn read_dataset(layout: &RunLayout, spec: &DomainSpec) -> Result<DomainData, PipelineError> {
    let path = layout.dataset(&spec.name);
    require(std::slice::from_ref(&path))?;
    Ok(read_domain_jsonl(&path, spec)?)
}

pub fn stage_label(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<(), PipelineError> {
    let specs: Vec<&DomainSpec> = cfg.domains.iter().chain([&cfg.meta]).collect();
    require(&specs.iter().map(|s| layout.dataset(&s.name)).collect::<Vec<_>>())?;
    let mut stats = std::collections::BTreeMap::new();
    for spec in specs {
        let data = read_dataset(layout, spec)?;
        let mut labeled = label_dataset(&data, cfg.labeling.num_rollouts, label_seed(cfg))?;
        let is_meta = spec.name == cfg.meta.name;
        if cfg.labeling.dynamic_filter && !is_meta {
            let (kept, s) = filter_questions(&labeled);
            labeled = kept;
            stats.insert(spec.name.clone(), s);
        }
        let path = layout.labels(&spec.name);
        ensure_parent(&path)?;
        write_labels_jsonl(&labeled, &path)?;
    }
    let stats: std::collections::BTreeMap<String, FilterStats> = stats;
    write_file(&layout.filter_stats(), serde_json::to_string_pretty(&stats)?.as_bytes())
}

struct DiskObserver<'a> {
    layout: &'a RunLayout,
    records: Vec<IterationRecord>,
    error: Option<PipelineError>,
}

impl TrainObserver for DiskObserver<'_> {
    fn on_iteration(&mut self, record: &IterationRecord) {
        self.records.push(record.clone());
    }

    fn on_checkpoint(&mut self, checkpoint: &Checkpoint) {
        if self.error.is_some() {
            return;
        }
        let path = self.layout.checkpoint(checkpoint.training_step);
        let res = ensure_parent(&path).and_then(|_| write_checkpoint(checkpoint, &path).map_err(PipelineError::from));
        self.error = res.err();
    }
}

fn write_history(history: &TrainHistory, path: &Path) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    history.write_csv(&mut buf)?;
    write_file(path, &buf)
}

fn read_labels(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<Vec<LabeledDomain>, PipelineError> {
    let paths: Vec<PathBuf> = cfg.domains.iter().map(|d| layout.labels(&d.name)).collect();
    require(&paths)?;
    Ok(cfg
        .domains
        .iter()
        .zip(&paths)
        .map(|(d, p)| read_labels_jsonl(p, &d.name))
        .collect::<Result<_, _>>()?)
}

pub fn stage_train(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<(), PipelineError> {
    let domains = read_labels(cfg, layout)?;
    require(&[layout.labels(&cfg.meta.name), layout.dataset(&cfg.meta.name)])?;
    let meta_data = read_dataset(layout, &cfg.meta)?;
    let meta_labels = read_labels_jsonl(&layout.labels(&cfg.meta.name), &cfg.meta.name)?;
    let meta = MetaSet { trajectories: meta_data.trajectories().cloned().collect(), labeled: meta_labels.prefixes };
    let train = cfg.effective_train();
    let names: Vec<String> = domains.iter().map(|d| d.domain.clone()).collect();

    let ckpt_dir = layout.root.join("checkpoints");
    if ckpt_dir.exists() {
        fs::remove_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    }
    let mut obs = DiskObserver { layout, records: Vec::new(), error: None };
    let result = match cfg.variant {
        Variant::Dreamprm | Variant::NoAfl => train_dreamprm_observed(&train, &domains, &meta, &mut obs),
        Variant::Vanilla => train_vanilla_observed(&train, &domains, Some(&meta), &mut obs),
        Variant::OrmOnly => {
            let finals: Vec<LabeledDomain> = domains.iter().map(LabeledDomain::final_only).collect();
            train_vanilla_observed(&train, &finals, Some(&meta), &mut obs)
        }
    };
    let partial = TrainHistory { domains: names, records: std::mem::take(&mut obs.records) };
    write_history(&partial, &layout.history())?;
    if let Some(e) = obs.error.take() {
        return Err(e);
    }
    let outcome = result?;
    let model = Checkpoint { prm: outcome.prm, alpha: outcome.alpha, training_step: train.outer_iterations as u64 };
    write_checkpoint(&model, &layout.model())?;

    let orm_path = layout.orm();
    if cfg.evaluation.include_orm && cfg.variant != Variant::OrmOnly {
        let finals: Vec<LabeledDomain> = domains.iter().map(LabeledDomain::final_only).collect();
        let orm_cfg = TrainConfig { checkpoint_every: 0, ..train };
        let orm = crate::bilevel::train_vanilla(&orm_cfg, &finals, None)?;
        write_checkpoint(&Checkpoint { prm: orm.prm, alpha: orm.alpha, training_step: orm_cfg.outer_iterations as u64 }, &orm_path)?;
    } else if orm_path.exists() {
        fs::remove_file(&orm_path).map_err(io_err(&orm_path))?;
    }
    Ok(())
}

/// Scores a trajectory by its final-step score alone.
pub struct FinalStepScorer<'a>(pub &'a PrmParams);

impl crate::select::StepScorer for FinalStepScorer<'_> {
    fn score_steps(&self, t: &crate::sim::Trajectory) -> Result<Vec<f64>, PrmError> {
        Ok(vec![crate::prm::score_step(self.0, &t.steps, t.steps.len())?])
    }
}

pub fn candidate_sets(cfg: &ExperimentConfig, test: &DomainData) -> Result<Vec<CandidateSet>, PipelineError> {
    let answer_seed = seed::derive_seed(cfg.seed, &[seed::tag("answers")]);
    Ok(test.questions.iter().map(|q| CandidateSet::from_sample(q, answer_seed)).collect::<Result<_, _>>()?)
}

pub fn stage_evaluate(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<EvalReport, PipelineError> {
    let mut needed = vec![layout.model(), layout.dataset(&cfg.test.name)];
    let with_orm = cfg.evaluation.include_orm && cfg.variant != Variant::OrmOnly;
    if with_orm {
        needed.push(layout.orm());
    }
    require(&needed)?;
    let model = read_checkpoint(&layout.model())?;
    let orm = if with_orm { Some(read_checkpoint(&layout.orm())?) } else { None };
    let test = read_dataset(layout, &cfg.test)?;
    let sets = candidate_sets(cfg, &test)?;
    let report = match cfg.variant {
        Variant::OrmOnly => evaluate(&FinalStepScorer(&model.prm), Some(&model.prm), &sets)?,
        _ => evaluate(&model.prm, orm.as_ref().map(|c| &c.prm), &sets)?,
    };
    write_file(&layout.eval_json(), report.to_json().as_bytes())?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_file(&layout.eval_csv(), &buf)?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub stages: Vec<Stage>,
    pub report: Option<EvalReport>,
    pub manifest: Manifest,
}

/// Validates the config, runs the requested stages in order, and rewrites the
/// manifest. The manifest is also written when a stage fails.
pub fn run_pipeline(cfg: &ExperimentConfig, stages: &[Stage]) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let layout = RunLayout::new(&cfg.out_dir);
    fs::create_dir_all(&layout.root)
        .map_err(|e| PipelineError::Config(format!("out_dir: cannot create {}: {e}", layout.root.display())))?;
    write_file(&layout.config(), serde_json::to_string_pretty(cfg)?.as_bytes())?;

    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    let mut eval = None;
    let mut run = || -> Result<(), PipelineError> {
        for stage in &stages {
            match stage {
                Stage::Simulate => stage_simulate(cfg, &layout)?,
                Stage::Label => stage_label(cfg, &layout)?,
                Stage::Train => stage_train(cfg, &layout)?,
                Stage::Evaluate => eval = Some(stage_evaluate(cfg, &layout)?),
                Stage::Report => {
                    report(&layout.root)?;
                }
            }
        }
        Ok(())
    };
    let outcome = run();
    let manifest = build_manifest(cfg, &layout.root)?;
    outcome?;
    Ok(RunSummary { out_dir: layout.root.clone(), stages, report: eval, manifest })
}
