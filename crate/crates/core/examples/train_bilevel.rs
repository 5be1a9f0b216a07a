//! Bi-level training on the default four-domain mixture at reduced scale,
//! next to a vanilla run with frozen weights.
//!
//! `cargo run --release --example train_bilevel -- [iterations] [seed]`

use dreamprm::bilevel::{train_dreamprm, train_vanilla, MetaSet, TrainConfig};
use dreamprm::pipeline::ExperimentConfig;
use dreamprm::sim::generate_domain;
use dreamprm::supervision::label_dataset;

fn main() {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map_or(600, |s| s.parse().expect("iterations"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let exp = ExperimentConfig::default();
    let domains: Vec<_> = exp
        .domains
        .iter()
        .map(|s| label_dataset(&generate_domain(&s.clone().with_questions(300), seed).unwrap(), 8, seed).unwrap())
        .collect();
    let meta_data = generate_domain(&exp.meta.clone().with_questions(300), seed).unwrap();
    let meta = MetaSet {
        trajectories: meta_data.trajectories().cloned().collect(),
        labeled: label_dataset(&meta_data, 8, seed).unwrap().prefixes,
    };

    let cfg = TrainConfig { outer_iterations: iterations, seed, ..TrainConfig::default() };
    let dream = train_dreamprm(&cfg, &domains, &meta).unwrap();
    let vanilla = train_vanilla(&cfg, &domains, Some(&meta)).unwrap();

    println!("{:>6} {:>9} {:>9}  alpha", "iter", "inner", "meta");
    let every = (iterations / 10).max(1);
    for r in dream.history.records.iter().filter(|r| r.iteration % every == 0 || r.iteration + 1 == iterations) {
        let a: Vec<String> = r.alpha.iter().map(|a| format!("{a:6.3}")).collect();
        println!("{:>6} {:>9.4} {:>9.4}  [{}]", r.iteration, r.inner_loss, r.meta_loss, a.join(" "));
    }
    println!();
    for (d, a) in domains.iter().zip(&dream.alpha) {
        println!("{:<16} alpha = {a:.3}", d.domain);
    }
    let w = 100.min(iterations);
    println!(
        "\nsmoothed final meta loss: bi-level {:.4}, vanilla {:.4}",
        dream.history.smoothed(iterations, w, |r| r.meta_loss),
        vanilla.history.smoothed(iterations, w, |r| r.meta_loss)
    );
}
