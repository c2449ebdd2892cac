//! Command-line front end: configuration, MI-table cache, subcommands and artifact output.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::power::PolicyScheme;

pub use commands::{dispatch, ensure_table, Manifest};
pub use config::{db_to_linear, load_config, load_preset, parse_config, ExperimentConfig, TreeChoice, CACHE_ENV};

#[derive(Debug, Parser)]
#[command(name = "inr-arq", version, about = "Outage analysis and simulation of multi-bit feedback INR-ARQ")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration file (TOML).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Shipped configuration: siso_fig5 or mimo_fig6.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override the number of feedback levels K.
    #[arg(short = 'K', long)]
    pub levels: Option<usize>,
    /// Override the threshold tree: designed or canonical.
    #[arg(long)]
    pub tree: Option<TreeChoice>,
    /// Override the output directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores); never changes results.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Build (or reuse from the cache) the MI CDF table.
    MiTable {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form diversity of each scheme at round L.
    Diversity {
        #[command(flatten)]
        common: Common,
    },
    /// Rate-diversity tradeoff staircases for rounds 1..=L.
    Curve {
        #[command(flatten)]
        common: Common,
        /// Rates sampled on (0, M N_t), cell midpoints.
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// Quantization threshold tree as CSV and JSON.
    Thresholds {
        #[command(flatten)]
        common: Common,
    },
    /// Power policy for each configured SNR (or one given SNR).
    SolvePower {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: Option<PolicyScheme>,
        /// Budget in dB instead of the configured list.
        #[arg(long, allow_hyphen_values = true)]
        snr_db: Option<f64>,
    },
    /// Monte-Carlo outage curve over the configured SNRs.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: Option<PolicyScheme>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use this policy file (its budget sets the single SNR point).
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

/// 0 success, 2 validation, 3 runtime or infeasible, 4 I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::InvalidArgument(_) | Error::Parse { .. } => 2,
        Error::Io { .. } => 4,
        _ => 3,
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                Error::Validation(list) => {
                    eprintln!("error: invalid configuration");
                    for m in list {
                        eprintln!("  {m}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            exit_code(&e)
        }
    }
}
