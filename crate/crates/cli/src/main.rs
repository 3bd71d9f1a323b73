//! `pvcluster`: cluster PV fleets by their gap-tolerant Dirichlet
//! embeddings.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, Keys};

#[derive(Parser)]
#[command(name = "pvcluster", version, about = "Cluster PV systems by their generation behavior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Invocation {
    /// TOML config; flags override its keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    keys: Keys,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fleet: series, metadata and ground truth.
    Synth(Invocation),
    /// Profiles, vocabulary, documents and Dirichlet embeddings.
    Embed(Invocation),
    /// Distance matrix, clusters, quantile summaries and scores.
    Cluster(Invocation),
    /// Hyperparameter sweep with a resumable ledger and C selection.
    Grid(Invocation),
    /// Fill one system's gaps from its cluster's leave-self-out summary.
    Impute(Invocation),
}

fn resolve(inv: Invocation) -> Result<Keys, ConfigError> {
    let base = match &inv.config {
        Some(path) => Keys::from_file(path)?,
        None => Keys::default(),
    };
    let keys = base.overlay(inv.keys);
    if let Some(jobs) = keys.jobs {
        if jobs == 0 {
            return Err(ConfigError("jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| ConfigError(format!("cannot set up {jobs} worker threads: {e}")))?;
    }
    Ok(keys)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (inv, run): (Invocation, fn(&Keys) -> anyhow::Result<()>) = match cli.command {
        Command::Synth(i) => (i, commands::synth),
        Command::Embed(i) => (i, commands::embed),
        Command::Cluster(i) => (i, commands::cluster),
        Command::Grid(i) => (i, commands::grid),
        Command::Impute(i) => (i, commands::impute),
    };
    let result = resolve(inv).map_err(anyhow::Error::from).and_then(|keys| run(&keys));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
