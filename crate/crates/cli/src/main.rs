//! `catvac`: prepare features, train, run the K-means baseline and evaluate.

mod commands;
mod common;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::common::CliError;

#[derive(Parser)]
#[command(name = "catvac", version, about = "Categorical variational acoustic clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract, normalize and cache features for every clip in a manifest.
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the categorical VAE on a prepared cache.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides `train.seed` from the config.
        #[arg(long, env = "CATVAC_SEED", hide_env_values = true)]
        seed: Option<u64>,
        /// Run at most this many epochs now; `--resume` from `last.ckpt` continues.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Score cluster assignments on the test split.
    Eval {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the K-means baseline on the training split.
    Kmeans {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = catvac_core::kmeans::DEFAULT_RESTARTS)]
        restarts: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "CATVAC_SEED", hide_env_values = true)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Source {
    Model,
    Kmeans,
    Labels,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prepare { manifest, config, out } => commands::prepare::run(&manifest, &config, &out),
        Command::Train {
            config,
            out,
            resume,
            seed,
            stop_after,
        } => commands::train::run(&config, &out, resume.as_deref(), seed, stop_after),
        Command::Eval {
            ckpt,
            manifest,
            source,
            out,
        } => commands::eval::run(ckpt.as_deref(), &manifest, source, &out),
        Command::Kmeans {
            manifest,
            k,
            restarts,
            out,
            seed,
        } => commands::kmeans::run(&manifest, k, restarts, &out, seed.unwrap_or(0)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        // The panic message has already been printed by the default hook.
        Err(_) => ExitCode::from(2),
    }
}
