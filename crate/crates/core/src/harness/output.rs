//! Result files: per-run RMSE series, summaries, manifest and snapshots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{summarize, ExperimentConfig, RunResult, RunStatus, TuneCell};
use crate::error::{Error, Result};

fn io(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io)
}

fn rmse_csv(run: &RunResult) -> String {
    let mut s = String::from("t,rmse_forecast,rmse_analysis,spread\n");
    for c in &run.cycles {
        let _ = writeln!(s, "{},{:e},{:e},{:e}", c.t, c.rmse_forecast, c.rmse_analysis, c.spread_analysis);
    }
    s
}

fn status_text(s: &RunStatus) -> String {
    match s {
        RunStatus::Completed => "completed".into(),
        RunStatus::Failed { cycle, t, message } => format!("failed at cycle {cycle} (t = {t}): {message}"),
    }
}

fn manifest(config: &ExperimentConfig, command: &str, runs: &[RunResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "command = {command}");
    let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "runs = {}", runs.len());
    for r in runs {
        let _ = writeln!(s, "run_{}_status = {}", r.seed, status_text(&r.status));
    }
    for line in config.to_toml().lines() {
        if !line.trim().is_empty() {
            let _ = writeln!(s, "config.{line}");
        }
    }
    s
}

fn summary_header() -> &'static str {
    "label,completed,failed,mean_rmse_forecast,mean_rmse_analysis,mean_spread\n"
}

fn summary_row(label: &str, config: &ExperimentConfig, runs: &[RunResult]) -> String {
    let m = summarize(config, runs);
    format!(
        "{label},{},{},{:e},{:e},{:e}\n",
        m.completed, m.failed, m.mean_forecast, m.mean_analysis, m.mean_spread
    )
}

fn write_run_files(dir: &Path, runs: &[RunResult]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io)?;
    for r in runs {
        let rd = dir.join(format!("run_{}", r.seed));
        fs::create_dir_all(&rd).map_err(io)?;
        write(&rd.join("rmse.csv"), &rmse_csv(r))?;
        for (n, mesh, state) in &r.snapshots {
            write(&rd.join(format!("mesh_{n:05}.txt")), mesh)?;
            write(&rd.join(format!("state_{n:05}.txt")), state)?;
        }
    }
    // the first run's series also sits at the top level
    if let Some(r) = runs.first() {
        write(&dir.join("rmse.csv"), &rmse_csv(r))?;
    }
    Ok(())
}

/// Files for a plain `run`: per-run series and snapshots, summary, manifest.
pub fn write_runs(out: &Path, config: &ExperimentConfig, runs: &[RunResult]) -> Result<()> {
    write_run_files(out, runs)?;
    write(&out.join("summary.csv"), &format!("{}{}", summary_header(), summary_row("run", config, runs)))?;
    write(&out.join("manifest.txt"), &manifest(config, "run", runs))
}

/// Files for a comparison: one subdirectory per variant plus a joint summary.
pub fn write_comparison(
    out: &Path,
    command: &str,
    config: &ExperimentConfig,
    results: &[(String, ExperimentConfig, Vec<RunResult>)],
) -> Result<()> {
    fs::create_dir_all(out).map_err(io)?;
    let mut summary = summary_header().to_string();
    let mut all = Vec::new();
    for (label, c, runs) in results {
        write_run_files(&out.join(label.replace(['=', '/'], "_")), runs)?;
        summary.push_str(&summary_row(label, c, runs));
        all.extend(runs.iter().cloned());
    }
    write(&out.join("summary.csv"), &summary)?;
    write(&out.join("manifest.txt"), &manifest(config, command, &all))
}

/// Files for `tune`: the grid as summary.csv and the manifest.
pub fn write_tuning(out: &Path, config: &ExperimentConfig, cells: &[TuneCell]) -> Result<()> {
    fs::create_dir_all(out).map_err(io)?;
    let mut s = String::from("inflation,length,completed,failed,mean_rmse_forecast,mean_rmse_analysis,mean_spread\n");
    for c in cells {
        let m = &c.summary;
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{:e},{:e}",
            c.inflation, c.length, m.completed, m.failed, m.mean_forecast, m.mean_analysis, m.mean_spread
        );
    }
    write(&out.join("summary.csv"), &s)?;
    write(&out.join("manifest.txt"), &manifest(config, "tune", &[]))
}
