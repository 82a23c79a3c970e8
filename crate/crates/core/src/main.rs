use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmenkf::harness::{self, ExperimentConfig, RunResult};
use mmenkf::Error;

#[derive(Parser)]
#[command(name = "mmenkf", version, about = "Twin experiments for ensemble filtering on adaptive moving meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML file with ExperimentConfig fields; missing keys take the baseline values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run `run_count` twin experiments with one configuration.
    Run(Common),
    /// Inflation x localization-length grid search.
    Tune(Common),
    /// Compare the localization schemes listed in `compare_localization`.
    CompareLoc(Common),
    /// Compare ensemble-only, observation-only and intersected common meshes.
    CompareMesh(Common),
    /// Sweep the shared covariance scale over `sweep_cov`.
    SweepCov(Common),
    /// Sample observations with each `noisy_truth_noise` variance.
    NoisyData(Common),
    /// DG versus linear state transfer.
    CompareInterp(Common),
}

enum Failure {
    Config(String),
    Run(String),
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text).map_err(|e| Failure::Config(e.to_string()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(config)
}

fn run_error(e: Error) -> Failure {
    match e {
        Error::InvalidParameter(_) | Error::Parse(_) => Failure::Config(e.to_string()),
        other => Failure::Run(other.to_string()),
    }
}

fn check_runs<'a>(runs: impl IntoIterator<Item = &'a RunResult>) -> Result<(), Failure> {
    let failed: Vec<String> = runs
        .into_iter()
        .filter_map(|r| match &r.status {
            harness::RunStatus::Completed => None,
            harness::RunStatus::Failed { cycle, message, .. } => {
                Some(format!("seed {} failed at cycle {cycle}: {message}", r.seed))
            }
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(failed.join("; ")))
    }
}

fn comparison(common: &Common, kind: &str) -> Result<(), Failure> {
    let config = load(common)?;
    let variants = harness::variants(&config, kind).map_err(run_error)?;
    let mut results = Vec::new();
    for (label, c) in variants {
        let runs = harness::run_config(&c).map_err(run_error)?;
        let s = harness::summarize(&c, &runs);
        println!("{label}: mean analysis RMSE {:.4e}, {} failed", s.mean_analysis, s.failed);
        results.push((label, c, runs));
    }
    harness::write_comparison(&common.out_dir, kind, &config, &results).map_err(|e| Failure::Run(e.to_string()))?;
    check_runs(results.iter().flat_map(|(_, _, r)| r))
}

fn execute(command: &Command) -> Result<(), Failure> {
    match command {
        Command::Run(common) => {
            let config = load(common)?;
            let runs = harness::run_config(&config).map_err(run_error)?;
            harness::write_runs(&common.out_dir, &config, &runs).map_err(|e| Failure::Run(e.to_string()))?;
            let s = harness::summarize(&config, &runs);
            println!("mean analysis RMSE {:.4e} over {} completed runs", s.mean_analysis, s.completed);
            check_runs(&runs)
        }
        Command::Tune(common) => {
            let config = load(common)?;
            let cells =
                harness::tune_grid(&config, &config.tune_inflation, &config.tune_length).map_err(run_error)?;
            harness::write_tuning(&common.out_dir, &config, &cells).map_err(|e| Failure::Run(e.to_string()))?;
            let best = cells
                .iter()
                .filter(|c| c.summary.mean_analysis.is_finite())
                .min_by(|a, b| a.summary.mean_analysis.total_cmp(&b.summary.mean_analysis));
            match best {
                Some(b) => {
                    println!("best: inflation {} length {} RMSE {:.4e}", b.inflation, b.length, b.summary.mean_analysis);
                    Ok(())
                }
                None => Err(Failure::Run("every tuning cell failed".into())),
            }
        }
        Command::CompareLoc(c) => comparison(c, "compare-loc"),
        Command::CompareMesh(c) => comparison(c, "compare-mesh"),
        Command::SweepCov(c) => comparison(c, "sweep-cov"),
        Command::NoisyData(c) => comparison(c, "noisy-data"),
        Command::CompareInterp(c) => comparison(c, "compare-interp"),
    }
}

fn out_dir(command: &Command) -> &Path {
    match command {
        Command::Run(c)
        | Command::Tune(c)
        | Command::CompareLoc(c)
        | Command::CompareMesh(c)
        | Command::SweepCov(c)
        | Command::NoisyData(c)
        | Command::CompareInterp(c) => &c.out_dir,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => {
            println!("results in {}", out_dir(&cli.command).display());
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("run failed: {msg}");
            ExitCode::from(1)
        }
    }
}
