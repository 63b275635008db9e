//! Command-line front end: dataset generation, pursuit, learning, the
//! synthetic benchmark, patch denoising and support statistics.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "bmpursuit", version, about = "Sparse recovery with Boltzmann machine support priors")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML configuration for the chosen command.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Master seed; overrides the configuration.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a model, Gibbs-sample supports and emit signals.
    Sample(commands::sample::SampleArgs),
    /// Run one pursuit over a signal file.
    Pursue(commands::pursue::PursueArgs),
    /// Noise sweep of all pursuits on synthetic data.
    BenchSynthetic(commands::bench::BenchArgs),
    /// Fit (W, b) to a support file by maximum pseudo-likelihood.
    Learn(commands::learn::LearnArgs),
    /// Adaptive recovery and patch denoising grid.
    #[command(alias = "denoise")]
    Adaptive(commands::denoise::DenoiseArgs),
    /// Co-activation statistics of a support file.
    Validity(commands::validity::ValidityArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be positive"));
        }
        // A second initialization in the same process (tests) is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let g = &cli.global;
    match &cli.command {
        Command::Sample(a) => commands::sample::run(g, a),
        Command::Pursue(a) => commands::pursue::run(g, a),
        Command::BenchSynthetic(a) => commands::bench::run(g, a),
        Command::Learn(a) => commands::learn::run(g, a),
        Command::Adaptive(a) => commands::denoise::run(g, a),
        Command::Validity(a) => commands::validity::run(g, a),
    }
}
