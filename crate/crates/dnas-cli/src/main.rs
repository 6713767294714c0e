//! `dnas` — differentiable architecture search for image denoising, driven
//! by a single TOML config. Exit codes: 0 success, 1 usage or config error,
//! 2 runtime failure.

mod config;
mod pareto;
mod pipeline;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

use config::{parse_resolution, RunConfig};

/// An error with its process exit code: input/config problems exit 1,
/// failures during compute exit 2.
pub enum CliError {
    Input(anyhow::Error),
    Run(anyhow::Error),
}

pub type CliResult<T = ()> = Result<T, CliError>;

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Run(_) => 2,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            CliError::Input(e) | CliError::Run(e) => e,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "dnas",
    about = "Entropy-regularized differentiable architecture search for image denoising"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write per-candidate cost tables and a network complexity summary
    Costs {
        #[arg(long)]
        config: PathBuf,
        /// Measured latency table (TOML); required when cost.eta < 1
        #[arg(long)]
        latency_table: Option<PathBuf>,
        /// Override the report resolution, e.g. 256x256
        #[arg(long, value_parser = parse_resolution)]
        resolution: Option<[usize; 2]>,
    },
    /// Train the supernet and record losses, mixture weights and the
    /// derived architecture
    Search {
        #[arg(long)]
        config: PathBuf,
    },
    /// Derive the discrete architecture from recorded mixture weights
    /// (no training)
    Derive {
        #[arg(long)]
        config: PathBuf,
        /// JSON file of per-stage mixture weights, overriding the run file
        #[arg(long)]
        alpha: Option<PathBuf>,
        /// Run file to read weights from (default: <output_dir>/run.json)
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Fine-tune the derived network from inherited supernet weights
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Evaluate the trained model on held-out patches, per noise level
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Compute the non-dominated (quality, cost) front of a points CSV
    Pareto {
        #[arg(long)]
        config: PathBuf,
        /// CSV with header label,quality,cost
        #[arg(long)]
        points: PathBuf,
    },
}

fn load(config: &PathBuf) -> CliResult<RunConfig> {
    RunConfig::load(config).map_err(CliError::Input)
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Costs {
            config,
            latency_table,
            resolution,
        } => pipeline::cmd_costs(&load(&config)?, latency_table.as_deref(), resolution),
        Command::Search { config } => pipeline::cmd_search(&load(&config)?),
        Command::Derive { config, alpha, run } => {
            pipeline::cmd_derive(&load(&config)?, alpha.as_deref(), run.as_deref())
        }
        Command::Finetune { config, run } => {
            pipeline::cmd_finetune(&load(&config)?, run.as_deref())
        }
        Command::Eval { config, run } => pipeline::cmd_eval(&load(&config)?, run.as_deref()),
        Command::Pareto { config, points } => pareto::cmd_pareto(&load(&config)?, &points),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit 0
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {:#}", e.error());
        std::process::exit(e.code());
    }
}
