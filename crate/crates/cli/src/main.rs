//! Command-line front end for the scheduling simulator.
//!
//! `hflsim run` loads (or defaults) a config, applies overrides, and executes
//! one experiment or one sweep, writing CSV and JSON outputs into the chosen
//! directory. Exit codes: 0 on success, 2 for usage and configuration
//! mistakes, 1 for runtime failures.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use env_logger::Env;

use hfl_core::baselines::{BaselineError, SchedulerKind};
use hfl_core::config::{load_config, ConfigError, SystemConfig};
use hfl_core::experiment::{
    run_experiment, run_sweep, ExperimentError, ExperimentSpec, SweepVar,
};

#[derive(Parser)]
#[command(
    name = "hflsim",
    version,
    about = "Round-by-round simulator for energy-harvesting federated learning schedulers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment (or a sweep) with one scheduler.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scheduler: tpddpg, ga, eba, rs, ns, ddpg-only, or ho.
    #[arg(long, default_value = "tpddpg")]
    scheduler: String,
    /// Episodes to run (appended to a checkpoint's count when resuming).
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    /// Master seed; overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Sweep over one variable, e.g. `bandwidth=5e5,1e6,2e6`.
    /// Variables: bandwidth, energy_rate, n_clients, n_select.
    #[arg(long)]
    sweep: Option<String>,
    /// Evaluation mode: no exploration noise, no learning updates.
    #[arg(long)]
    freeze: bool,
    /// Checkpoint file: loaded when present, saved after the run.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Log every accepted move of the association search.
    #[arg(long)]
    trace_scaba: bool,
    /// Write the generated topology to world.json before running.
    #[arg(long)]
    dump_world: bool,
    /// Config override like `penalty=1000` or `reward.penalty=1000`
    /// (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Selection count for the rs and ho schedulers (default: half the
    /// clients, rounded up).
    #[arg(long)]
    n_select: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(args),
    }
}

fn run(args: RunArgs) -> ExitCode {
    let mut logger = env_logger::Builder::from_env(Env::default().default_filter_or("info"));
    if args.trace_scaba {
        logger.filter_module("hfl_core::scaba", log::LevelFilter::Debug);
    }
    let _ = logger.try_init();
    match execute(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error ({}): {err:#}", categorize(&err));
            if usage_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn categorize(err: &anyhow::Error) -> &'static str {
    if err.downcast_ref::<ConfigError>().is_some() {
        return "config";
    }
    if err.downcast_ref::<BaselineError>().is_some() {
        return "usage";
    }
    match err.downcast_ref::<ExperimentError>() {
        Some(ExperimentError::Invalid(_)) => "usage",
        Some(ExperimentError::Config(_)) => "config",
        Some(ExperimentError::Io(_)) => "io",
        Some(ExperimentError::Checkpoint(_)) => "checkpoint",
        Some(_) => "run",
        None => {
            if err.downcast_ref::<std::io::Error>().is_some() {
                "io"
            } else {
                "usage"
            }
        }
    }
}

fn usage_error(err: &anyhow::Error) -> bool {
    matches!(categorize(err), "usage" | "config" | "checkpoint")
}

fn execute(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)
            .with_context(|| format!("loading config from {}", path.display()))?,
        None => SystemConfig::default(),
    };
    for entry in &args.set {
        cfg.apply_override(entry)
            .with_context(|| format!("applying override `{entry}`"))?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n_select {
        cfg.n_select = Some(n);
    }
    let scheduler = SchedulerKind::parse(&args.scheduler)?;
    let sweep = args.sweep.as_deref().map(parse_sweep).transpose()?;

    let spec = ExperimentSpec {
        cfg,
        scheduler,
        episodes: args.episodes,
        out_dir: args.out,
        sweep,
        freeze: args.freeze,
        checkpoint: args.checkpoint,
        dump_world: args.dump_world,
    };
    if spec.sweep.is_some() {
        let table = run_sweep(&spec)?;
        println!(
            "swept {} values with {}; outputs in {}",
            table.len(),
            spec.scheduler.name(),
            spec.out_dir.display()
        );
        for (value, mean_utility) in table {
            println!("  {value}: tail mean utility {mean_utility:.4}");
        }
    } else {
        let summary = run_experiment(&spec)?;
        println!(
            "ran {} episodes with {}; tail mean utility {:.4}; outputs in {}",
            summary.episodes.len(),
            spec.scheduler.name(),
            summary.mean_utility_tail,
            spec.out_dir.display()
        );
    }
    Ok(())
}

fn parse_sweep(text: &str) -> anyhow::Result<(SweepVar, Vec<f64>)> {
    let (name, values) = text
        .split_once('=')
        .context("expected --sweep VAR=v1,v2,...")?;
    let var = SweepVar::parse(name.trim())?;
    let values: Vec<f64> = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("bad sweep value `{v}`"))
        })
        .collect::<anyhow::Result<_>>()?;
    Ok((var, values))
}
