use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dreamprm::pipeline::{report, run_pipeline, ExperimentConfig, PipelineError, Stage, Variant};

#[derive(Parser)]
#[command(name = "dreamprm", version, about = "Domain-reweighted PRM experiments on simulated reasoning data")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// TOML or JSON experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed and DREAMPRM_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// DREAMPRM, VANILLA, NO_AFL or ORM_ONLY.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Run directory; overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated stages when no subcommand is given.
    #[arg(long, default_value = "all")]
    stages: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate question/trajectory data for every domain.
    Simulate,
    /// Monte-Carlo step labels for the generated data.
    Label,
    /// Fit the PRM (and domain weights for DREAMPRM).
    Train,
    /// Best-of-N selection on the test domain.
    Evaluate,
    /// Plot data and SVGs for an existing run directory.
    Report,
    /// Every stage in order.
    All,
    /// Print the default config as TOML.
    PrintConfig,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(v) = &cli.variant {
        cfg.variant = v.parse::<Variant>()?;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let stages = match cli.command {
        Some(Command::PrintConfig) => {
            print!("{}", ExperimentConfig::default().to_toml());
            return Ok(());
        }
        Some(Command::Report) if cli.config.is_none() => {
            let dir = cli.out.clone().unwrap_or_else(|| ExperimentConfig::default().out_dir);
            let files = report(&dir)?;
            print!("{}", std::fs::read_to_string(&files.summary).unwrap_or_default());
            return Ok(());
        }
        Some(Command::Simulate) => vec![Stage::Simulate],
        Some(Command::Label) => vec![Stage::Label],
        Some(Command::Train) => vec![Stage::Train],
        Some(Command::Evaluate) => vec![Stage::Evaluate],
        Some(Command::Report) => vec![Stage::Report],
        Some(Command::All) => Stage::ALL.to_vec(),
        None => Stage::parse_list(&cli.stages)?,
    };
    let cfg = load(cli)?;
    let summary = run_pipeline(&cfg, &stages)?;
    if let Some(r) = &summary.report {
        println!("select@8 {:.4}  pass@1 {:.4}", r.select_at(8).unwrap_or(f64::NAN), r.pass_at_1);
    }
    println!("artifacts in {}", summary.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
