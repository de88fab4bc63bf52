use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use plume_da::harness::{run_experiment, Experiment, ExperimentConfig, RunPlan};
use plume_da::routing::ThetaSchedule;

#[derive(Parser)]
#[command(version, about = "Drone-guided ensemble filtering of a contaminant plume")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reference run with the true wind and diffusion.
    Truth(Common),
    /// Truth plus the model run without observations.
    Baseline(Common),
    /// Truth plus the filtered runs, one per theta.
    Assimilate(Common),
    /// Truth, baseline and every filtered run.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated constant exploration weights.
    #[arg(long, value_delimiter = ',')]
    theta: Option<Vec<f64>>,
    /// Comma-separated times (s) for field snapshots.
    #[arg(long, value_delimiter = ',')]
    snapshot_times: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> plume_da::Result<ExitCode> {
    let (args, kind) = match cli.command {
        Command::Truth(a) => (a, 0),
        Command::Baseline(a) => (a, 1),
        Command::Assimilate(a) => (a, 2),
        Command::Sweep(a) => (a, 3),
    };
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output = out;
    }
    if let Some(thetas) = args.theta {
        cfg.thetas = thetas.into_iter().map(ThetaSchedule::Constant).collect();
    }
    if let Some(times) = args.snapshot_times {
        cfg.snapshot_times = times;
    }
    let plan = match kind {
        0 => RunPlan::truth_only(),
        1 => RunPlan::sweep(Vec::new()),
        2 => RunPlan {
            baseline: false,
            thetas: cfg.thetas.clone(),
        },
        _ => RunPlan::sweep(cfg.thetas.clone()),
    };
    let out = cfg.output.clone();
    let exp = Experiment::prepare(cfg)?;
    let artifacts = run_experiment(&exp, &plan, &out)?;
    log::info!("wrote {} files to {}", artifacts.files.len(), out.display());
    for (run, err) in &artifacts.failures {
        log::error!("{run} failed: {err}");
    }
    Ok(if artifacts.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
