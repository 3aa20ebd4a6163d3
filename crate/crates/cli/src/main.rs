//! Command-line front end: the experiment pipeline, the validation suite and
//! the gradient audit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use optlearn::harness::{
    run_gradcheck, run_pipeline, run_validation, ConditionSummary, ExperimentConfig, GradcheckConfig, Stage,
    ValidationConfig,
};
use optlearn::{Error, Result};
use serde::de::DeserializeOwned;

/// Environment variable holding the number of worker threads.
const WORKERS_ENV: &str = "OPTLEARN_WORKERS";

#[derive(Parser)]
#[command(name = "optlearn", version, about = "Learn options from demonstrations and measure transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole experiment (or through `--stage`).
    Pipeline(PipelineArgs),
    /// Tasks, demonstrations and option learning.
    Learn(PipelineArgs),
    /// Everything through the transfer evaluation.
    Evaluate(PipelineArgs),
    /// Everything through the per-option map grids.
    EmitMaps(PipelineArgs),
    /// Compare analytic likelihoods and terminations with sampling.
    Validate(CheckArgs),
    /// Audit the objective's gradient with finite differences.
    Gradcheck(CheckArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// Experiment configuration (JSON); defaults fill missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Last stage to run: tasks, demos, options, evaluate or maps.
    #[arg(long)]
    stage: Option<String>,
}

#[derive(Args)]
struct CheckArgs {
    /// Check configuration (JSON); defaults fill missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn configure_workers() -> Result<()> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let workers: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("{WORKERS_ENV} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {workers} workers: {e}")))
}

/// `Ok(false)` means the command ran but its check failed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Pipeline(args) => pipeline(args, Stage::Maps),
        Command::Learn(args) => pipeline(args, Stage::Options),
        Command::Evaluate(args) => pipeline(args, Stage::Evaluate),
        Command::EmitMaps(args) => pipeline(args, Stage::Maps),
        Command::Validate(args) => {
            let mut config: ValidationConfig = load_or_default(args.config.as_deref())?;
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            let report = run_validation(&config)?;
            print!("{report}");
            write_report(args.out.as_deref(), &report)?;
            if let Some(failure) = report.first_failure() {
                eprintln!("validation failed: {failure}");
            }
            Ok(report.passed())
        }
        Command::Gradcheck(args) => {
            let mut config: GradcheckConfig = load_or_default(args.config.as_deref())?;
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            let report = run_gradcheck(&config)?;
            print!("{report}");
            write_report(args.out.as_deref(), &report)?;
            Ok(report.passed())
        }
    }
}

fn pipeline(args: PipelineArgs, default_stage: Stage) -> Result<bool> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    let out = args
        .out
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::InvalidConfig("no output directory: pass --out or set output_dir".into()))?;
    let through = match &args.stage {
        Some(name) => name.parse()?,
        None => default_stage,
    };
    let manifest = run_pipeline(&config, &out, through)?;
    for record in &manifest.stages {
        println!("{:<9} {:>8.2}s  {} files", record.stage, record.wall_seconds, record.outputs.len());
    }
    if through >= Stage::Evaluate {
        let summary: Vec<ConditionSummary> = read_json(&out.join("summary.json"))?;
        println!("{:<12} {:>7} {:>5} {:>12} {:>9} {:>10}", "condition", "options", "runs", "mean return", "std err", "decisions");
        for s in &summary {
            println!(
                "{:<12} {:>7} {:>5} {:>12.2} {:>9.2} {:>10.1}",
                s.condition, s.n_options, s.runs, s.mean_return, s.std_error, s.mean_decisions
            );
        }
    }
    println!("artifacts in {}", out.display());
    Ok(true)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn write_report<T: serde::Serialize>(path: Option<&Path>, report: &T) -> Result<()> {
    let Some(path) = path else {
        return Ok(());
    };
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
