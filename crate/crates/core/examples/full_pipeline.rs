//! Every stage of an experiment on disk, at reduced scale: datasets, labels,
//! checkpoints, history, evaluation report, plot data, and manifest.
//!
//! `cargo run --release --example full_pipeline -- [out_dir]`

use dreamprm::pipeline::{run_pipeline, ExperimentConfig, Stage};

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("dreamprm-run").display().to_string());
    let mut cfg = ExperimentConfig { out_dir: out.into(), ..ExperimentConfig::default() };
    for d in cfg.domains.iter_mut().chain([&mut cfg.meta, &mut cfg.test]) {
        d.num_questions = 200;
    }
    cfg.train.outer_iterations = 300;
    cfg.train.checkpoint_every = 100;

    let summary = run_pipeline(&cfg, &Stage::ALL).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    });
    print!("{}", std::fs::read_to_string(summary.out_dir.join("report/summary.txt")).unwrap());
    println!("\n{} files in {}", summary.manifest.files.len(), summary.out_dir.display());
    for (path, hash) in &summary.manifest.files {
        println!("  {} {path}", &hash[..12]);
    }
}
