use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{finite_difference, ParamVector};

/// Straight-line scorer forward pass, independent of the tape.
fn reference_score(phi: &PrmParams, x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    let layers = phi.arch.hidden.len() + 1;
    for l in 0..layers {
        let w = phi.params.block(&format!("w{l}")).unwrap();
        let b = phi.params.block(&format!("b{l}")).unwrap();
        let out_dim = b.len();
        let mut z = b.to_vec();
        for (i, &hi) in h.iter().enumerate() {
            for j in 0..out_dim {
                z[j] += hi * w[i * out_dim + j];
            }
        }
        h = if l + 1 == layers {
            z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
        } else {
            z.iter().map(|v| v.tanh()).collect()
        };
    }
    h[0]
}

fn random_prm(seed: u64) -> PrmParams {
    let arch = PrmArch::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..arch.param_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
    PrmParams::from_values(arch, values).unwrap()
}

fn random_steps(rng: &mut ChaCha8Rng, n: usize) -> Vec<Step> {
    (1..=n)
        .map(|i| Step {
            features: (0..FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect(),
            flawed: rng.random_bool(0.3),
            index: i,
        })
        .collect()
}

fn random_labels(seed: u64, count: usize) -> Vec<LabeledPrefix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|j| {
            let i = rng.random_range(1..=5);
            let steps = random_steps(&mut rng, i);
            let correct = rng.random_range(0..=8);
            LabeledPrefix {
                question_id: j as u64,
                trajectory: 0,
                prefix_len: i,
                steps_total: 5,
                features: steps.iter().map(|s| s.features.clone()).collect(),
                p: correct as f64 / 8.0,
                correct,
                num_rollouts: 8,
            }
        })
        .collect()
}

fn random_trajectories(seed: u64, count: usize) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|j| Trajectory { question_id: j as u64, steps: random_steps(&mut rng, 5), final_correct: rng.random_bool(0.5) })
        .collect()
}

#[test]
fn fresh_scorer_outputs_one_half() {
    let phi = PrmParams::init(PrmArch::default(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in 1..6 {
        let steps = random_steps(&mut rng, n);
        assert_eq!(score_step(&phi, &steps, 5).unwrap(), 0.5);
    }
}

#[test]
fn scoring_is_pure_and_matches_reference() {
    let phi = random_prm(4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let steps = random_steps(&mut rng, 3);
    let a = score_step(&phi, &steps, 5).unwrap();
    assert_eq!(a, score_step(&phi, &steps, 5).unwrap());
    let feats: Vec<Vec<f64>> = steps.iter().map(|s| s.features.clone()).collect();
    assert_abs_diff_eq!(a, reference_score(&phi, &encode_prefix(&feats, 5)), epsilon = 1e-13);
}

#[test]
fn score_step_errors() {
    let phi = PrmParams::init(PrmArch::default(), 1);
    assert!(matches!(score_step(&phi, &[], 5), Err(PrmError::EmptyPrefix)));
    let mut s = random_steps(&mut ChaCha8Rng::seed_from_u64(0), 2);
    s[1].features[3] = f64::NAN;
    assert!(matches!(score_step(&phi, &s, 5), Err(PrmError::NonFiniteFeatures { step: 2 })));
}

#[test]
fn encoding_layout() {
    let feats = vec![vec![1.0, 2.0], vec![3.0, 6.0]];
    assert_eq!(encode_prefix(&feats, 4), vec![2.0, 4.0, 3.0, 6.0, 0.5]);
}

#[test]
fn mse_floor_and_constant_scorer() {
    let phi = random_prm(2);
    let mut labels = random_labels(3, 20);
    for l in &mut labels {
        l.p = reference_score(&phi, &encode_prefix(&l.features, l.steps_total));
    }
    assert_abs_diff_eq!(train_loss_single_domain(&phi, &labels), 0.0, epsilon = 1e-24);

    let half = PrmParams::init(PrmArch::default(), 0);
    let mut ones = random_labels(4, 10);
    ones.iter_mut().for_each(|l| l.p = 1.0);
    assert_abs_diff_eq!(train_loss_single_domain(&half, &ones), 0.25, epsilon = 1e-15);
    let mut zeros = ones.clone();
    zeros.iter_mut().for_each(|l| l.p = 0.0);
    assert_abs_diff_eq!(per_step_meta_loss(&half, &zeros), 0.25, epsilon = 1e-15);
}

#[test]
fn mse_matches_reference() {
    let phi = random_prm(5);
    let labels = random_labels(6, 40);
    let reference: f64 = labels
        .iter()
        .map(|l| (reference_score(&phi, &encode_prefix(&l.features, l.steps_total)) - l.p).powi(2))
        .sum::<f64>()
        / labels.len() as f64;
    assert_abs_diff_eq!(train_loss_single_domain(&phi, &labels), reference, epsilon = 1e-12);
    assert_eq!(per_step_meta_loss(&phi, &labels), train_loss_single_domain(&phi, &labels));
}

#[test]
fn weighted_loss_properties() {
    let phi = random_prm(7);
    let d: Vec<Vec<LabeledPrefix>> = (0..3).map(|k| random_labels(10 + k, 15)).collect();
    let refs: Vec<&[LabeledPrefix]> = d.iter().map(|v| v.as_slice()).collect();
    let parts: Vec<f64> = refs.iter().map(|x| train_loss_single_domain(&phi, x)).collect();

    let uniform = weighted_train_loss(&phi, &[1.0, 1.0, 1.0], &refs).unwrap();
    assert_abs_diff_eq!(uniform, parts.iter().sum::<f64>(), epsilon = 1e-14);

    let alpha = [0.3, 1.7, 0.9];
    let doubled = [0.6, 3.4, 1.8];
    assert_abs_diff_eq!(
        weighted_train_loss(&phi, &doubled, &refs).unwrap(),
        2.0 * weighted_train_loss(&phi, &alpha, &refs).unwrap(),
        epsilon = 1e-14
    );
    assert!(matches!(weighted_train_loss(&phi, &[1.0], &refs), Err(PrmError::WeightCount { expected: 3, found: 1 })));
}

fn weighted_grads(phi: &PrmParams, alpha: &[f64], batches: &[PrefixBatch]) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::<f64>::new();
    let p = tape.leaf(phi.params.values().to_vec(), phi.params.len(), 1);
    let a = tape.leaf(alpha.to_vec(), alpha.len(), 1);
    let l = weighted_mse_on_tape(&mut tape, &phi.arch, p, a, batches);
    let g = tape.backward(l).unwrap();
    (g.wrt(p), g.wrt(a))
}

#[test]
fn alpha_gradient_is_domain_loss() {
    let phi = random_prm(8);
    let d: Vec<Vec<LabeledPrefix>> = (0..3).map(|k| random_labels(20 + k, 12)).collect();
    let batches: Vec<PrefixBatch> = d.iter().map(|x| PrefixBatch::from_labels(x)).collect();
    let (_, ga) = weighted_grads(&phi, &[0.4, 1.2, 2.0], &batches);
    for k in 0..3 {
        assert_abs_diff_eq!(ga[k], train_loss_single_domain(&phi, &d[k]), epsilon = 1e-12);
    }
}

#[test]
fn zero_weight_gates_domain_gradient() {
    let phi = random_prm(9);
    let d: Vec<Vec<LabeledPrefix>> = (0..2).map(|k| random_labels(30 + k, 12)).collect();
    let batches: Vec<PrefixBatch> = d.iter().map(|x| PrefixBatch::from_labels(x)).collect();
    let (g_both, _) = weighted_grads(&phi, &[1.0, 0.0], &batches);
    let (g_first, _) = weighted_grads(&phi, &[1.0], &batches[..1]);
    assert_eq!(g_both, g_first);
}

#[test]
fn aggregate_examples() {
    assert_abs_diff_eq!(aggregate(&[0.5, 0.5, 0.5]).unwrap(), 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(aggregate(&[0.9, 0.8]).unwrap(), 9f64.ln() + 4f64.ln(), epsilon = 1e-12);
    assert_abs_diff_eq!(aggregate(&[0.9, 0.8]).unwrap(), 3.5835189384561099, epsilon = 1e-12);
    assert!(matches!(aggregate(&[]), Err(PrmError::EmptyScores)));
    // clamped, finite at the endpoints
    assert!(aggregate(&[0.0, 1.0]).unwrap().abs() < 1e-9);
}

#[test]
fn correctness_signal_reads_flag() {
    let mut t = random_trajectories(1, 1).remove(0);
    t.final_correct = true;
    assert_eq!(correctness_signal(&t), 1);
    t.final_correct = false;
    assert_eq!(correctness_signal(&t), 0);
    for s in &mut t.steps {
        s.features.iter_mut().for_each(|x| *x = 42.0);
    }
    assert_eq!(correctness_signal(&t), 0);
}

#[test]
fn meta_loss_examples() {
    let half = PrmParams::init(PrmArch::default(), 0);
    let mut ts = random_trajectories(2, 6);
    ts.iter_mut().for_each(|t| t.final_correct = false);
    assert_abs_diff_eq!(meta_loss(&half, &ts), 0.25, epsilon = 1e-15);
}

#[test]
fn meta_loss_matches_reference() {
    let phi = random_prm(11);
    let ts = random_trajectories(3, 25);
    let reference: f64 = ts
        .iter()
        .map(|t| {
            let feats: Vec<Vec<f64>> = t.steps.iter().map(|s| s.features.clone()).collect();
            let a: f64 = (1..=5)
                .map(|i| {
                    let p = reference_score(&phi, &encode_prefix(&feats[..i], 5)).clamp(1e-6, 1.0 - 1e-6);
                    (p / (1.0 - p)).ln()
                })
                .sum();
            let s = 1.0 / (1.0 + (-a).exp());
            (s - t.final_correct as u8 as f64).powi(2)
        })
        .sum::<f64>()
        / ts.len() as f64;
    assert_abs_diff_eq!(meta_loss(&phi, &ts), reference, epsilon = 1e-12);
}

#[test]
fn saturated_oracle_drives_meta_loss_to_zero() {
    // Output bias pushed far positive/negative: every step score saturates.
    let arch = PrmArch::default();
    let base = PrmParams::init(arch.clone(), 0);
    let bias_at = base.params.block_range("b2").unwrap().start;
    let with_bias = |b: f64| {
        let mut v = base.params.values().to_vec();
        v[bias_at] = b;
        PrmParams::from_values(arch.clone(), v).unwrap()
    };
    let mut ts = random_trajectories(5, 8);
    ts.iter_mut().for_each(|t| t.final_correct = true);
    assert!(meta_loss(&with_bias(20.0), &ts) < 1e-12);
    ts.iter_mut().for_each(|t| t.final_correct = false);
    assert!(meta_loss(&with_bias(-20.0), &ts) < 1e-12);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let arch = PrmArch { feature_dim: FEATURE_DIM, hidden: vec![4, 3] };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let values: Vec<f64> = (0..arch.param_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
    let phi = PrmParams::from_values(arch.clone(), values).unwrap();
    let ts = random_trajectories(13, 6);
    let batch = TrajectoryBatch::from_trajectories(&ts);
    let labels = random_labels(14, 10);
    let pb = PrefixBatch::from_labels(&labels);

    let mut tape = Tape::<f64>::new();
    let p = tape.leaf(phi.params.values().to_vec(), phi.params.len(), 1);
    let afl = afl_on_tape(&mut tape, &arch, p, &batch, 1.0);
    let g_afl = tape.backward(afl).unwrap().wrt(p);
    let mse = mse_on_tape(&mut tape, &arch, p, &pb);
    let g_mse = tape.backward(mse).unwrap().wrt(p);

    let eval = |f: &dyn Fn(&mut Tape<f64>, Var) -> Var, v: &ParamVector| {
        let mut t = Tape::<f64>::new();
        let p = t.constant(v.values().to_vec(), v.len(), 1);
        let out = f(&mut t, p);
        t.scalar(out)
    };
    let fd_afl = finite_difference(|v| eval(&|t, p| afl_on_tape(t, &arch, p, &batch, 1.0), v), &phi.params, 1e-5);
    let fd_mse = finite_difference(|v| eval(&|t, p| mse_on_tape(t, &arch, p, &pb), v), &phi.params, 1e-5);
    for i in 0..phi.params.len() {
        assert_abs_diff_eq!(g_afl[i], fd_afl.values()[i], epsilon = 1e-8);
        assert_abs_diff_eq!(g_mse[i], fd_mse.values()[i], epsilon = 1e-8);
    }
}

proptest! {
    #[test]
    fn aggregate_is_strictly_increasing(ps in prop::collection::vec(0.01f64..0.99, 1..8), idx in 0usize..8, bump in 1e-4f64..0.005) {
        let i = idx % ps.len();
        let mut up = ps.clone();
        up[i] += bump;
        prop_assert!(aggregate(&up).unwrap() > aggregate(&ps).unwrap());
    }

    #[test]
    fn aggregate_is_antisymmetric(ps in prop::collection::vec(1e-3f64..0.999, 1..8)) {
        let comp: Vec<f64> = ps.iter().map(|p| 1.0 - p).collect();
        prop_assert!((aggregate(&ps).unwrap() + aggregate(&comp).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn losses_are_bounded(seed in 0u64..1000) {
        let phi = random_prm(seed);
        let ts = random_trajectories(seed + 1, 4);
        let m = meta_loss(&phi, &ts);
        prop_assert!((0.0..=1.0).contains(&m));
        let l = train_loss_single_domain(&phi, &random_labels(seed + 2, 4));
        prop_assert!(l >= 0.0);
    }
}
