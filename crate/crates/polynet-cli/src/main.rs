//! `polynet` command line.
//!
//! Subcommands: `train`, `verify`, `expand`, `degree`, all config-file
//! driven with flag overrides. Exit codes are a stable contract for CI:
//! 0 success, 1 verification failure (or divergence/corruption), 2
//! usage/config error, 3 IO error.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::{cmd_degree, cmd_expand, cmd_train, cmd_verify, ExpandOptions};
use config::{RunConfig, VerifySection};
use polynet::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "polynet", version, about = "Polynomial networks: train, verify, expand, probe degree")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a recipe config.
    Train {
        /// JSON run config (see recipes/).
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the verification batteries (oracle grid, gradient checks, degree
    /// probes, checkpoint validation). Exit 0 iff everything passes.
    Verify {
        /// JSON run config with a `verify` section. Optional when
        /// --checkpoint is given.
        config: Option<PathBuf>,
        /// Verify this checkpoint (in addition to, or instead of, the
        /// config's selections).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print a stored model's dense monomial expansion.
    Expand {
        checkpoint: PathBuf,
        /// Fit order (default: the model's declared total degree).
        #[arg(long)]
        max_order: Option<usize>,
        /// Monomial basis budget (refuses larger requests).
        #[arg(long)]
        budget: Option<usize>,
        /// Hide coefficients below this magnitude in the text report.
        #[arg(long, default_value_t = 1e-9)]
        min_coeff: f64,
        /// Where to write expand.txt / expand.kv (default: next to the
        /// checkpoint).
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Probe a stored model's realized polynomial degree along a random ray.
    Degree {
        checkpoint: PathBuf,
        /// Probe ceiling (default: declared degree + 2).
        #[arg(long)]
        max_degree: Option<usize>,
        #[arg(long, default_value_t = 0x0DE6_4EE)]
        seed: u64,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Integrity(_) | Error::Checkpoint(_) | Error::VerificationFailed(_) | Error::Diverged { .. } => 1,
        Error::InvalidArgument(_)
        | Error::Json(_)
        | Error::BudgetExceeded { .. }
        | Error::ShapeMismatch { .. } => 2,
        Error::Io { .. } | Error::IdxParse { .. } | Error::CsvParse { .. } => 3,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Train { config, output_dir, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            cmd_train(cfg)?;
            Ok(0)
        }
        Command::Verify { config, checkpoint, output_dir, seed } => {
            let mut cfg = match &config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig {
                    seed: 0,
                    output_dir: PathBuf::from("out/verify"),
                    dataset: None,
                    model: None,
                    train: None,
                    verify: Some(VerifySection::default()),
                    expected: None,
                },
            };
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let mut section = cfg.verify.clone().unwrap_or_default();
            if checkpoint.is_some() {
                section.checkpoint = checkpoint;
                if config.is_none() {
                    // Bare --checkpoint runs only the checkpoint validation.
                    section.grid = None;
                    section.grad_instances = None;
                    section.degree = None;
                }
            }
            cfg.verify = Some(section.clone());
            let passed = cmd_verify(cfg, section)?;
            Ok(if passed { 0 } else { 1 })
        }
        Command::Expand { checkpoint, max_order, budget, min_coeff, output_dir } => {
            cmd_expand(
                &checkpoint,
                ExpandOptions {
                    max_order,
                    budget,
                    min_coeff,
                    output_dir,
                },
            )?;
            Ok(0)
        }
        Command::Degree { checkpoint, max_degree, seed } => {
            cmd_degree(&checkpoint, max_degree, seed)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
