//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line straight
//! to stdout (bypassing the harness capture) and then asserts.
//!
//! Criteria 4–7 share one set of five-seed runs of the default experiment.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use dreamprm::autodiff::{
    hypergrad_unrolled, inner_value_and_grad, InnerOptimizer, OptimizerState, ParamVector, Tape, Var,
};
use dreamprm::bilevel::TrainHistory;
use dreamprm::pipeline::{run_pipeline, ExperimentConfig, Stage, Variant};
use dreamprm::prm::{AflObjective, PrefixBatch, PrmArch, PrmParams, TrajectoryBatch, WeightedTrainObjective};
use dreamprm::select::{evaluate, paired_bootstrap, CandidateSet, EvalReport, OracleScorer, K_VALUES};
use dreamprm::sim::{generate_domain, true_correctness_prob, Completer, DomainSpec, Step};
use dreamprm::supervision::{filter_questions, label_dataset, monte_carlo_label};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn verdict(id: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{tag}] {id}: {detail}");
    let _ = out.flush();
    assert!(pass, "{id} failed: {detail}");
}

// ---------------------------------------------------------------- criterion 1

struct Composition {
    ops: Vec<u8>,
    reducer: u8,
    m: usize,
}

/// Leaves: x (m), y (m), w (m×m), b (1), s (1), packed in that order.
fn leaf_sizes(m: usize) -> [usize; 5] {
    [m, m, m * m, 1, 1]
}

fn build(c: &Composition, tape: &mut Tape<f64>, values: &[f64]) -> (Var, Vec<Var>) {
    let m = c.m;
    let mut leaves = Vec::new();
    let mut at = 0;
    for (i, len) in leaf_sizes(m).into_iter().enumerate() {
        let (r, cols) = if i == 2 { (m, m) } else { (len, 1) };
        leaves.push(tape.leaf(values[at..at + len].to_vec(), r, cols));
        at += len;
    }
    let [x, y, w, b, s] = [leaves[0], leaves[1], leaves[2], leaves[3], leaves[4]];
    let mut cur = x;
    for &op in &c.ops {
        cur = match op {
            0 => tape.add(cur, y),
            1 => tape.sub(cur, y),
            2 => tape.mul(cur, y),
            3 => tape.sigmoid(cur),
            4 => tape.tanh(cur),
            5 => {
                let p = tape.sigmoid(cur);
                tape.log(p)
            }
            6 => tape.affine(cur, 0.7, -0.2),
            7 => tape.matmul(w, cur),
            8 => tape.square(cur),
            9 => tape.add_row(cur, b),
            10 => tape.clamp(cur, -1e3, 1e3),
            _ => tape.mul(cur, s),
        };
    }
    let out = match c.reducer {
        0 => tape.sum(cur),
        1 => tape.mean(cur),
        2 => {
            let seg = tape.segment_sum(cur, vec![2, m - 2]);
            let sq = tape.square(seg);
            tape.sum(sq)
        }
        _ => {
            let a = tape.slice(cur, 1, m - 1, 1);
            let bb = tape.slice(cur, 0, m - 1, 1);
            let p = tape.mul(a, bb);
            tape.sum(p)
        }
    };
    (out, leaves)
}

fn composition_error(c: &Composition, values: &[f64]) -> f64 {
    let mut tape = Tape::<f64>::new();
    let (loss, leaves) = build(c, &mut tape, values);
    let grads = tape.backward(loss).expect("finite gradients");
    let analytic: Vec<f64> = leaves.iter().flat_map(|&l| grads.wrt(l)).collect();

    let eval = |v: &[f64]| {
        let mut t = Tape::<f64>::new();
        let (l, _) = build(c, &mut t, v);
        t.scalar(l)
    };
    let eps = 1e-5;
    let mut numeric = Vec::with_capacity(values.len());
    let mut v = values.to_vec();
    for i in 0..values.len() {
        v[i] = values[i] + eps;
        let up = eval(&v);
        v[i] = values[i] - eps;
        let down = eval(&v);
        v[i] = values[i];
        numeric.push((up - down) / (2.0 * eps));
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

#[test]
fn c1_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(3..7);
        let depth = rng.random_range(2..7);
        let c = Composition { ops: (0..depth).map(|_| rng.random_range(0..12)).collect(), reducer: rng.random_range(0..4), m };
        let total: usize = leaf_sizes(m).iter().sum();
        let values: Vec<f64> = (0..total).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(composition_error(&c, &values));
    }
    let elapsed = start.elapsed();
    verdict(
        "C1 gradient correctness",
        worst < 1e-6 && elapsed < Duration::from_secs(10),
        format!("max relative error {worst:.2e} over 100 random compositions (< 1e-6), {elapsed:.2?} (< 10 s)"),
    );
}

// ---------------------------------------------------------------- criterion 2

struct QuadInner;
impl dreamprm::autodiff::InnerObjective for QuadInner {
    fn loss<T: dreamprm::autodiff::Real>(&self, _: usize, tape: &mut Tape<T>, phi: Var, alpha: Var) -> Var {
        let d = tape.affine(phi, 1.0, -1.0);
        let sq = tape.square(d);
        let s = tape.sum(sq);
        tape.mul(s, alpha)
    }
}

struct QuadMeta;
impl dreamprm::autodiff::MetaObjective for QuadMeta {
    fn loss<T: dreamprm::autodiff::Real>(&self, tape: &mut Tape<T>, phi: Var) -> Var {
        let d = tape.affine(phi, 1.0, -1.0);
        let sq = tape.square(d);
        tape.sum(sq)
    }
}

fn quadratic_error() -> f64 {
    let mut worst: f64 = 0.0;
    for (beta, alpha, phi0, k) in [(0.1, 1.0, 0.0, 1), (0.1, 0.7, -0.5, 5), (0.05, 1.3, 2.0, 3), (0.2, 0.4, 0.3, 8)] {
        let c: f64 = 1.0 - 2.0 * beta * alpha;
        let phik = 1.0 + c.powi(k) * (phi0 - 1.0);
        let exact = 2.0 * (phik - 1.0) * k as f64 * c.powi(k - 1) * (-2.0 * beta) * (phi0 - 1.0);
        let out = hypergrad_unrolled(
            &QuadInner,
            &QuadMeta,
            &ParamVector::flat(vec![phi0]),
            &ParamVector::flat(vec![alpha]),
            k as usize,
            &InnerOptimizer::Sgd { lr: beta },
            &OptimizerState::new(1),
        )
        .unwrap();
        worst = worst.max((out.alpha_grad[0] - exact).abs());
    }
    worst
}

/// Meta loss after `k` plain SGD steps, computed without the engine's unroll.
fn unrolled_meta(inner: &WeightedTrainObjective, meta: &AflObjective, phi0: &[f64], alpha: &[f64], k: usize, lr: f64) -> f64 {
    let mut phi = phi0.to_vec();
    for step in 0..k {
        let (_, g) = inner_value_and_grad(inner, step, &phi, alpha).unwrap();
        for (p, g) in phi.iter_mut().zip(&g) {
            *p -= lr * g;
        }
    }
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(phi.clone(), phi.len(), 1);
    let l = dreamprm::autodiff::MetaObjective::loss(meta, &mut tape, p);
    tape.scalar(l)
}

fn end_to_end_error() -> (f64, usize) {
    let arch = PrmArch { hidden: vec![8], ..PrmArch::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base = PrmParams::init(arch.clone(), 3);
    let phi0: Vec<f64> = base.params.values().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    let specs = [
        DomainSpec::informative("d0").with_questions(3),
        DomainSpec::informative("d1").with_questions(3).with_label_noise(0.3),
        DomainSpec::informative("d2").with_questions(3).with_triviality(0.5),
    ];
    let labeled: Vec<_> = specs.iter().map(|s| label_dataset(&generate_domain(s, 5).unwrap(), 8, 5).unwrap()).collect();
    let k = 5;
    let steps: Vec<Vec<PrefixBatch>> = (0..k)
        .map(|step| {
            labeled
                .iter()
                .map(|l| PrefixBatch::from_labels(l.prefixes.iter().skip(step * 7).take(12)))
                .collect()
        })
        .collect();
    let inner = WeightedTrainObjective { arch: &arch, steps };
    let meta_data = generate_domain(&DomainSpec::informative("meta").with_questions(3), 6).unwrap();
    let meta_traj: Vec<_> = meta_data.trajectories().take(20).collect();
    let meta = AflObjective { arch: &arch, batch: TrajectoryBatch::from_trajectories(meta_traj), temperature: 1.0 };
    let alpha = vec![1.0, 0.8, 1.2];
    let lr = 0.5;

    let out = hypergrad_unrolled(
        &inner,
        &meta,
        &base.params.with_values(phi0.clone()).unwrap(),
        &ParamVector::flat(alpha.clone()),
        k,
        &InnerOptimizer::Sgd { lr },
        &OptimizerState::new(phi0.len()),
    )
    .unwrap();
    let eps = 1e-3;
    let fd: Vec<f64> = (0..alpha.len())
        .map(|i| {
            let mut up = alpha.clone();
            up[i] += eps;
            let mut down = alpha.clone();
            down[i] -= eps;
            (unrolled_meta(&inner, &meta, &phi0, &up, k, lr) - unrolled_meta(&inner, &meta, &phi0, &down, k, lr)) / (2.0 * eps)
        })
        .collect();
    let diff: f64 = out.alpha_grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    (diff / norm, phi0.len())
}

#[test]
fn c2_hypergradient_correctness() {
    let start = Instant::now();
    let quad = quadratic_error();
    let (rel, params) = end_to_end_error();
    let elapsed = start.elapsed();
    verdict(
        "C2 hypergradient correctness",
        quad < 1e-10 && rel < 1e-3 && params <= 200 && elapsed < Duration::from_secs(120),
        format!(
            "(a) quadratic max abs error {quad:.2e} (< 1e-10); (b) {params}-param scorer, K=3, k=5, SGD: relative error {rel:.2e} (< 1e-3); {elapsed:.2?} (< 2 min)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn c3_monte_carlo_estimator() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let rollouts = 10_000;
    let mut worst_z: f64 = 0.0;
    let mut all = true;
    for trial in 0..20 {
        let q0 = rng.random_range(0.05..=1.0);
        let rho = rng.random_range(0.05..0.95);
        let f = rng.random_range(0..=5usize);
        let n = 7;
        let completer = Completer::new(q0, rho, n);
        let prefix: Vec<Step> = (0..6)
            .map(|i| Step { features: vec![0.0; 8], flawed: i < f, index: i + 1 })
            .collect();
        let truth = true_correctness_prob(&completer, &prefix);
        let est = monte_carlo_label(&completer, trial, &prefix, rollouts, 1000 + trial).unwrap().p;
        let sd = (truth * (1.0 - truth) / rollouts as f64).sqrt();
        let ok = (est - truth).abs() <= 3.0 * sd;
        all &= ok;
        if sd > 0.0 {
            worst_z = worst_z.max((est - truth).abs() / sd);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "C3 Monte-Carlo estimator",
        all && elapsed < Duration::from_secs(60),
        format!("20 settings at 10,000 rollouts, worst deviation {worst_z:.2} sd (<= 3), {elapsed:.2?} (< 1 min)"),
    );
}

// ------------------------------------------------------------ criteria 4 to 7

struct SeedRun {
    alpha: Vec<f64>,
    dream: EvalReport,
    vanilla: EvalReport,
    no_afl: EvalReport,
    dream_history: TrainHistory,
    vanilla_history: TrainHistory,
    dream_train_time: Duration,
}

fn read_report(dir: &Path) -> EvalReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("eval_report.json")).unwrap()).unwrap()
}

fn read_history(dir: &Path, domains: &[String]) -> TrainHistory {
    let mut r = csv::Reader::from_path(dir.join("history.csv")).unwrap();
    let mut records = Vec::new();
    for rec in r.records() {
        let rec = rec.unwrap();
        let num = |i: usize| rec[i].parse::<f64>().unwrap();
        let k = domains.len();
        records.push(dreamprm::bilevel::IterationRecord {
            iteration: rec[0].parse().unwrap(),
            inner_loss: num(1),
            meta_loss: num(2),
            alpha: (0..k).map(|j| num(3 + j)).collect(),
            inner_lr: num(3 + k),
            outer_lr: num(4 + k),
        });
    }
    TrainHistory { domains: domains.to_vec(), records }
}

fn run_seed(seed: u64, root: &Path) -> SeedRun {
    let dir = root.join(format!("seed{seed}"));
    let base = ExperimentConfig { seed, out_dir: dir.clone(), ..ExperimentConfig::default() };
    let names: Vec<String> = base.domains.iter().map(|d| d.name.clone()).collect();

    run_pipeline(&base, &[Stage::Simulate, Stage::Label]).unwrap();
    let t = Instant::now();
    run_pipeline(&base, &[Stage::Train, Stage::Evaluate]).unwrap();
    let dream_train_time = t.elapsed();
    let dream = read_report(&dir);
    let dream_history = read_history(&dir, &names);
    let alpha = dream_history.final_alpha().unwrap().to_vec();

    let mut other = base.clone();
    other.evaluation.include_orm = false;
    other.variant = Variant::Vanilla;
    run_pipeline(&other, &[Stage::Train, Stage::Evaluate]).unwrap();
    let vanilla = read_report(&dir);
    let vanilla_history = read_history(&dir, &names);

    other.variant = Variant::NoAfl;
    run_pipeline(&other, &[Stage::Train, Stage::Evaluate]).unwrap();
    let no_afl = read_report(&dir);

    SeedRun { alpha, dream, vanilla, no_afl, dream_history, vanilla_history, dream_train_time }
}

struct Shared {
    runs: Vec<SeedRun>,
    total: Duration,
}

fn shared() -> &'static Shared {
    static RUNS: OnceLock<Shared> = OnceLock::new();
    RUNS.get_or_init(|| {
        let root = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let runs = SEEDS.iter().map(|&s| run_seed(s, root.path())).collect();
        Shared { runs, total: start.elapsed() }
    })
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

/// Domain order of the default experiment.
const INFORMATIVE: [usize; 2] = [0, 1];
const NOISY: usize = 2;
const TRIVIAL: usize = 3;

#[test]
fn c4_domain_weight_separation() {
    let s = shared();
    let info = mean(s.runs.iter().flat_map(|r| INFORMATIVE.map(|i| r.alpha[i])));
    let noisy = mean(s.runs.iter().map(|r| r.alpha[NOISY]));
    let trivial = mean(s.runs.iter().map(|r| r.alpha[TRIVIAL]));
    let train_time: Duration = s.runs.iter().map(|r| r.dream_train_time).sum();
    let pass = info - noisy >= 0.2 && trivial < 1.0 && 1.0 < info && train_time < Duration::from_secs(1800);
    verdict(
        "C4 domain-weight separation",
        pass,
        format!(
            "mean final alpha: informative {info:.3}, label-noisy {noisy:.3}, trivial {trivial:.3}; gap {:.3} (>= 0.2), trivial < 1 < informative; bi-level training {train_time:.1?} over 5 seeds (< 30 min)",
            info - noisy
        ),
    );
}

#[test]
fn c5_dreamprm_beats_vanilla() {
    let s = shared();
    let dream: Vec<f64> = s.runs.iter().map(|r| r.dream.select_at(8).unwrap()).collect();
    let vanilla: Vec<f64> = s.runs.iter().map(|r| r.vanilla.select_at(8).unwrap()).collect();
    let wins = dream.iter().zip(&vanilla).filter(|(d, v)| d > v).count();
    let gap = mean(dream.iter().zip(&vanilla).map(|(d, v)| d - v));
    let lowers: Vec<f64> = s
        .runs
        .iter()
        .zip(SEEDS)
        .map(|(r, seed)| {
            paired_bootstrap(&r.dream.select_outcomes(8).unwrap(), &r.dream.pass_at_1_outcomes(), 2000, 0.95, seed).lower
        })
        .collect();
    let confident = lowers.iter().all(|&l| l > 0.0);
    verdict(
        "C5 DreamPRM beats vanilla",
        wins >= 4 && gap > 0.0 && confident,
        format!(
            "select@8 DreamPRM [{}] vs vanilla [{}]: {wins}/5 wins (>= 4), mean gap {gap:.4} (> 0); select@8 - pass@1 95% lower bounds [{}] (all > 0)",
            fmt(&dream),
            fmt(&vanilla),
            fmt(&lowers)
        ),
    );
}

#[test]
fn c6_ablation_ordering() {
    let s = shared();
    let dream = mean(s.runs.iter().map(|r| r.dream.select_at(8).unwrap()));
    let no_afl = mean(s.runs.iter().map(|r| r.no_afl.select_at(8).unwrap()));
    verdict(
        "C6 ablation ordering",
        no_afl <= dream,
        format!("mean select@8: NO_AFL {no_afl:.4} <= DreamPRM {dream:.4}"),
    );
}

#[test]
fn c7_scaling_curve() {
    let data = generate_domain(&DomainSpec::informative("test").with_questions(1000), 17).unwrap();
    let sets: Vec<CandidateSet> = data.questions.iter().map(|q| CandidateSet::from_sample(q, 17).unwrap()).collect();
    let oracle = evaluate(&OracleScorer, None, &sets).unwrap();
    let identity = oracle.select_at_k == oracle.pass_at_k && oracle.k_values == K_VALUES.to_vec();

    let s = shared();
    let at8 = mean(s.runs.iter().map(|r| r.dream.select_at(8).unwrap()));
    let at2 = mean(s.runs.iter().map(|r| r.dream.select_at(2).unwrap()));
    verdict(
        "C7 scaling curve",
        identity && at8 >= at2,
        format!(
            "oracle select@k == pass@k for k in {K_VALUES:?}: {identity} ([{}]); trained mean select@8 {at8:.4} >= select@2 {at2:.4}",
            fmt(&oracle.select_at_k)
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn c8_dynamic_filter() {
    let rate = |spec: DomainSpec| {
        let labeled = label_dataset(&generate_domain(&spec, 8).unwrap(), 8, 8).unwrap();
        filter_questions(&labeled).1.discard_rate()
    };
    let trivial = rate(DomainSpec::informative("trivial").with_triviality(1.0));
    let informative = rate(DomainSpec::informative("informative"));
    verdict(
        "C8 dynamic filter",
        trivial >= 0.95 && informative < 0.5,
        format!("discarded: trivial domain {:.1}% (>= 95%), informative domain {:.1}% (< 50%)", 100.0 * trivial, 100.0 * informative),
    );
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn c9_determinism() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    for d in cfg.domains.iter_mut().chain([&mut cfg.meta, &mut cfg.test]) {
        d.num_questions = 150;
    }
    cfg.train.outer_iterations = 120;
    cfg.train.checkpoint_every = 50;
    let run = |name: &str| {
        let c = ExperimentConfig { out_dir: root.path().join(name), ..cfg.clone() };
        let summary = run_pipeline(&c, &Stage::ALL).unwrap();
        (std::fs::read(summary.out_dir.join("eval_report.json")).unwrap(), summary.manifest)
    };
    let (a, ma) = run("a");
    let (b, mb) = run("b");
    let same_report = a == b;
    let same_manifest = ma.files == mb.files && ma.config_hash == mb.config_hash;
    verdict(
        "C9 determinism",
        same_report && same_manifest,
        format!(
            "EvalReport byte-identical: {same_report} ({} bytes); manifest hashes identical over {} files: {same_manifest}",
            a.len(),
            ma.files.len()
        ),
    );
}

// ------------------------------------------------- supplementary properties

#[test]
fn s1_vanilla_meta_loss_higher() {
    let s = shared();
    let last = |h: &TrainHistory| h.smoothed(h.records.len() - 1, 100, |r| r.meta_loss);
    let dream = mean(s.runs.iter().map(|r| last(&r.dream_history)));
    let vanilla = mean(s.runs.iter().map(|r| last(&r.vanilla_history)));
    verdict(
        "S1 held-out meta loss, vanilla above DreamPRM",
        vanilla > dream,
        format!("mean smoothed final meta loss: vanilla {vanilla:.4} > DreamPRM {dream:.4}"),
    );
}

#[test]
fn s2_loss_sanity() {
    let s = shared();
    let ok = s.runs.iter().all(|r| {
        let h = &r.dream_history;
        let t = h.records.len() - 1;
        let first = &h.records[0];
        h.smoothed(t, 100, |r| r.inner_loss) <= first.inner_loss && h.smoothed(t, 100, |r| r.meta_loss) <= first.meta_loss
    });
    let r = &s.runs[0].dream_history;
    let t = r.records.len() - 1;
    verdict(
        "S2 loss sanity",
        ok,
        format!(
            "smoothed inner and meta losses at T below iteration 0 in all seeds (seed 0: inner {:.4} -> {:.4}, meta {:.4} -> {:.4})",
            r.records[0].inner_loss,
            r.smoothed(t, 100, |x| x.inner_loss),
            r.records[0].meta_loss,
            r.smoothed(t, 100, |x| x.meta_loss)
        ),
    );
}

#[test]
fn s3_orm_between_pass1_and_dreamprm() {
    let s = shared();
    let pass1 = mean(s.runs.iter().map(|r| r.dream.pass_at_1));
    let orm = mean(s.runs.iter().map(|r| r.dream.orm_at(8).unwrap()));
    let dream = mean(s.runs.iter().map(|r| r.dream.select_at(8).unwrap()));
    verdict(
        "S3 ORM ordering",
        pass1 < orm && orm <= dream,
        format!("mean over 5 seeds: pass@1 {pass1:.4} < ORM select@8 {orm:.4} <= DreamPRM select@8 {dream:.4}; total shared runtime {:.1?}", s.total),
    );
}
