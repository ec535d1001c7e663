//! `hedgelab`: simulate markets, train hedging policies, tune generators.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{ConfigError, ExperimentConfig, Overrides};

#[derive(Parser, Debug)]
#[command(name = "hedgelab", version, about = "Deep hedging experiments on simulated and historical markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of simulated paths (tuning paths for `tune`).
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Training epochs (per-trial epochs for `tune`).
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    parallel: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Simulate a batch of price paths.
    GenPaths,
    /// Train a hedging policy and price the derivative.
    Train,
    /// Price with a saved policy checkpoint.
    Price,
    /// Search generator and learning-rate parameters.
    Tune,
    /// Kurtosis and return histograms of paths or an index series.
    Stats,
    /// Rebuild the full comparison table.
    ReproduceTable,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenPaths => "gen-paths",
            Command::Train => "train",
            Command::Price => "price",
            Command::Tune => "tune",
            Command::Stats => "stats",
            Command::ReproduceTable => "reproduce-table",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let flags = Overrides {
        seed: cli.seed,
        out: cli.out,
        paths: cli.paths,
        epochs: cli.epochs,
        trials: cli.trials,
        parallel: cli.parallel,
        for_tuning: matches!(cli.command, Command::Tune),
    };
    let env: Vec<(String, String)> = std::env::vars().collect();
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &env, &flags)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel)
        .build_global()
        .context("starting worker pool")?;
    log::info!("{} with seed {} into {}", cli.command.name(), cfg.seed, cfg.out.display());
    match cli.command {
        Command::GenPaths => commands::gen_paths(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Price => commands::price_cmd(&cfg),
        Command::Tune => commands::tune(&cfg),
        Command::Stats => commands::stats(&cfg),
        Command::ReproduceTable => commands::reproduce_table(&cfg),
    }
    .with_context(|| format!("{} failed", cli.command.name()))
}

/// 2 for configuration and input validation problems, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let invalid = err.chain().any(|cause| {
        cause.is::<ConfigError>()
            || cause
                .downcast_ref::<hedgelab::Error>()
                .is_some_and(hedgelab::Error::is_validation)
    });
    if invalid {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
