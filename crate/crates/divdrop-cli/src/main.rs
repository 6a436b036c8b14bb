//! `divdrop` — config-driven runner for dropout-mask uncertainty pipelines.
//!
//! Subcommands mirror the pipeline stages: `train` → `kernel` → `masks` →
//! `infer` for decoupled artifact plumbing, plus the canned protocols
//! `experiment`, `convergence` and `ood`. All commands are deterministic
//! given the same config and seed; diagnostics go to standard error, data to
//! files or standard output.
//!
//! Exit codes: 0 success, 2 config or flag error, 3 training divergence,
//! 4 missing upstream artifact, 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{CliError, Ctx};

/// Train dropout networks, estimate neuron kernels, draw diversified mask
/// banks and evaluate the resulting uncertainty estimates.
#[derive(Debug, Parser)]
#[command(name = "divdrop", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
struct Common {
    /// Run-config JSON file (see the README for the schema).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Master seed; overrides the config file and DIVDROP_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel evaluation (default: all cores).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Output directory; overrides the config file (default: out).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a dropout network on the configured dataset.
    Train(Common),
    /// Estimate per-layer neuron kernels from a trained network.
    Kernel {
        #[command(flatten)]
        common: Common,
        /// Trained-weights artifact (default: <out>/weights.json).
        #[arg(long, value_name = "PATH")]
        weights: Option<PathBuf>,
    },
    /// Draw one mask bank per configured sampler.
    Masks {
        #[command(flatten)]
        common: Common,
        /// Mask sets per bank (default: the largest configured T).
        #[arg(long, value_name = "T")]
        passes: Option<usize>,
    },
    /// Predict every configured input under a stored mask bank.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Trained-weights artifact (default: <out>/weights.json).
        #[arg(long, value_name = "PATH")]
        weights: Option<PathBuf>,
        /// Mask-bank artifact (default: the first configured sampler's bank).
        #[arg(long, value_name = "PATH")]
        bank: Option<PathBuf>,
    },
    /// Run the full protocol for the configured task and write a report.
    Experiment(Common),
    /// Trace mean test log-likelihood as a function of the pass count T.
    Convergence(Common),
    /// Out-of-distribution exceedance at the configured variance percentiles.
    Ood(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train(c) | Command::Experiment(c) | Command::Convergence(c) | Command::Ood(c) => c,
            Command::Kernel { common, .. }
            | Command::Masks { common, .. }
            | Command::Infer { common, .. } => common,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    let ctx = Ctx::prepare(&common.config, common.seed, common.jobs, common.out.clone())?;
    match cli.command {
        Command::Train(_) => commands::cmd_train(&ctx),
        Command::Kernel { weights, .. } => commands::cmd_kernel(&ctx, weights),
        Command::Masks { passes, .. } => commands::cmd_masks(&ctx, passes),
        Command::Infer { weights, bank, .. } => commands::cmd_infer(&ctx, weights, bank),
        Command::Experiment(_) => commands::cmd_experiment(&ctx),
        Command::Convergence(_) => commands::cmd_convergence(&ctx),
        Command::Ood(_) => commands::cmd_ood(&ctx),
    }
}
