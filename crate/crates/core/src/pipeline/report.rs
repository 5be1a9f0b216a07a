use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{io_err, svg, write_file, ExperimentConfig, PipelineError, RunLayout};
use crate::select::EvalReport;

/// Files written by [`report`].
#[derive(Clone, Debug)]
pub struct ReportFiles {
    pub alpha_csv: PathBuf,
    pub alpha_svg: PathBuf,
    pub trajectory_csv: PathBuf,
    pub trajectory_svg: PathBuf,
    pub accuracy_csv: PathBuf,
    pub accuracy_svg: PathBuf,
    pub summary: PathBuf,
}

struct History {
    alpha_names: Vec<String>,
    rows: Vec<(f64, f64, f64, Vec<f64>)>,
}

fn read_history(path: &Path) -> Result<History, PipelineError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| PipelineError::MissingArtifact(vec![format!("{} column `{name}`", path.display())]);
    let it = col("iteration").ok_or_else(|| missing("iteration"))?;
    let inner = col("inner_loss").ok_or_else(|| missing("inner_loss"))?;
    let meta = col("meta_loss").ok_or_else(|| missing("meta_loss"))?;
    let alpha_cols: Vec<usize> = (0..headers.len()).filter(|&i| headers[i].starts_with("alpha_")).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().unwrap_or(f64::NAN);
        rows.push((num(it), num(inner), num(meta), alpha_cols.iter().map(|&i| num(i)).collect()));
    }
    Ok(History { alpha_names: alpha_cols.iter().map(|&i| headers[i].to_string()).collect(), rows })
}

/// Emits plot data and SVG renderings for a completed run directory.
pub fn report(root: &Path) -> Result<ReportFiles, PipelineError> {
    let layout = RunLayout::new(root);
    let needed = [layout.config(), layout.history(), layout.eval_json()];
    let missing: Vec<String> = needed.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingArtifact(missing));
    }
    let cfg_text = fs::read_to_string(layout.config()).map_err(io_err(&layout.config()))?;
    let cfg: ExperimentConfig = serde_json::from_str(&cfg_text)?;
    let eval_text = fs::read_to_string(layout.eval_json()).map_err(io_err(&layout.eval_json()))?;
    let eval: EvalReport = serde_json::from_str(&eval_text)?;
    let history = read_history(&layout.history())?;
    let names: Vec<String> = cfg.domains.iter().map(|d| d.name.clone()).collect();
    let final_alpha = history.rows.last().map(|r| r.3.clone()).unwrap_or_else(|| vec![f64::NAN; names.len()]);

    let dir = layout.report_dir();
    let files = ReportFiles {
        alpha_csv: dir.join("alpha.csv"),
        alpha_svg: dir.join("alpha.svg"),
        trajectory_csv: dir.join("trajectory.csv"),
        trajectory_svg: dir.join("trajectory.svg"),
        accuracy_csv: dir.join("accuracy_vs_k.csv"),
        accuracy_svg: dir.join("accuracy_vs_k.svg"),
        summary: dir.join("summary.txt"),
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["domain", "alpha"])?;
    for (n, a) in names.iter().zip(&final_alpha) {
        w.write_record([n.clone(), a.to_string()])?;
    }
    write_file(&files.alpha_csv, &w.into_inner().map_err(|e| e.into_error()).map_err(io_err(&files.alpha_csv))?)?;
    write_file(&files.alpha_svg, svg::bar_chart("Final domain weights", &names, &final_alpha, Some(1.0)).as_bytes())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["iteration".to_string(), "inner_loss".into(), "meta_loss".into()];
    header.extend(history.alpha_names.iter().cloned());
    w.write_record(&header)?;
    for (it, inner, meta, alpha) in &history.rows {
        let mut row = vec![it.to_string(), inner.to_string(), meta.to_string()];
        row.extend(alpha.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    write_file(&files.trajectory_csv, &w.into_inner().map_err(|e| e.into_error()).map_err(io_err(&files.trajectory_csv))?)?;
    let mut series = vec![
        ("inner_loss".to_string(), history.rows.iter().map(|r| (r.0, r.1)).collect()),
        ("meta_loss".to_string(), history.rows.iter().map(|r| (r.0, r.2)).collect()),
    ];
    for (i, n) in names.iter().enumerate() {
        series.push((format!("alpha {n}"), history.rows.iter().map(|r| (r.0, r.3[i])).collect()));
    }
    write_file(&files.trajectory_svg, svg::line_chart("Losses and domain weights", "outer iteration", &series).as_bytes())?;

    let mut buf = Vec::new();
    eval.write_csv(&mut buf)?;
    write_file(&files.accuracy_csv, &buf)?;
    let ks: Vec<f64> = eval.k_values.iter().map(|&k| k as f64).collect();
    let mut curves = vec![
        ("pass@k".to_string(), ks.iter().copied().zip(eval.pass_at_k.iter().copied()).collect()),
        ("PRM select@k".to_string(), ks.iter().copied().zip(eval.select_at_k.iter().copied()).collect()),
        ("self-consistency".to_string(), ks.iter().copied().zip(eval.self_consistency.iter().copied()).collect()),
    ];
    if let Some(orm) = &eval.orm {
        curves.push(("ORM".to_string(), ks.iter().copied().zip(orm.iter().copied()).collect()));
    }
    write_file(&files.accuracy_svg, svg::line_chart("Accuracy vs number of candidates", "k", &curves).as_bytes())?;

    let mut s = String::new();
    let _ = writeln!(s, "variant: {}  seed: {}  questions: {}", cfg.variant, cfg.seed, eval.num_questions);
    let _ = writeln!(s, "\nfinal domain weights");
    for (n, a) in names.iter().zip(&final_alpha) {
        let _ = writeln!(s, "  {n:<20} {a:>8.4}");
    }
    let _ = writeln!(s, "\n{:<18}{}", "method", eval.k_values.iter().map(|k| format!("{:>8}", format!("k={k}"))).collect::<String>());
    let mut table = vec![("pass@k", &eval.pass_at_k), ("PRM select", &eval.select_at_k), ("self-consistency", &eval.self_consistency)];
    if let Some(orm) = &eval.orm {
        table.push(("ORM select", orm));
    }
    for (name, values) in table {
        let _ = writeln!(s, "{name:<18}{}", values.iter().map(|v| format!("{v:>8.3}")).collect::<String>());
    }
    write_file(&files.summary, s.as_bytes())?;
    Ok(files)
}
