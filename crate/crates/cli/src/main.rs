//! `perchom`: experiment runner for the percolation homogenization laboratory.
//!
//! Each subcommand writes a CSV table (to `--out` or standard output) and,
//! when `--out` is given, a JSON sidecar with the resolved configuration,
//! the version and the elapsed time. Exit status is 0 on success, 1 when a
//! computation or check fails, and 2 on a usage error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use crate::commands::{
    ConductivityArgs, DerivativeArgs, EinsteinArgs, Outcome, PartitionArgs, SampleArgs, VerifyArgs,
    WalkArgs,
};
use crate::config::ConfigFile;

/// Numerical laboratory for supercritical bond-percolation homogenization.
#[derive(Debug, Parser)]
#[command(name = "perchom", version, about)]
struct Cli {
    /// TOML file with one table per subcommand; flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true, env = "PERCHOM_THREADS")]
    threads: Option<usize>,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Output file; the JSON sidecar is written next to it. For `sample`
    /// this is the binary configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a configuration and write it in binary form, or read one back.
    Sample(SampleArgs),
    /// Monte Carlo estimate of the finite-volume conductivity.
    Conductivity(ConductivityArgs),
    /// Derivatives of the conductivity in `p`.
    Derivative(DerivativeArgs),
    /// Randomized identity suites with per-identity maximal residuals.
    Verify(VerifyArgs),
    /// Random-walk diffusivity and density estimates.
    Walk(WalkArgs),
    /// Per-level statistics of pyramid partitions.
    Partition(PartitionArgs),
    /// Compare half the diffusivity with conductivity over density.
    Einstein(EinsteinArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sample(_) => "sample",
            Command::Conductivity(_) => "conductivity",
            Command::Derivative(_) => "derivative",
            Command::Verify(_) => "verify",
            Command::Walk(_) => "walk",
            Command::Partition(_) => "partition",
            Command::Einstein(_) => "einstein",
        }
    }
}

/// Reports a missing required parameter as a usage error (exit status 2).
pub(crate) fn missing(subcommand: &str, flag: &str) -> ! {
    let mut cmd = Cli::command();
    let sub = cmd
        .find_subcommand_mut(subcommand)
        .expect("subcommand exists")
        .clone()
        .bin_name(format!("perchom {subcommand}"));
    sub.clone()
        .error(
            clap::error::ErrorKind::MissingRequiredArgument,
            format!("the following required argument was not provided: --{flag}"),
        )
        .exit()
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    if let Some(n) = cli.threads {
        if n == 0 {
            anyhow::bail!("--threads must be at least 1");
        }
        perchom::exec::configure_threads(n)
            .map_err(|e| anyhow::anyhow!("configuring threads: {e}"))?;
    }
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let ctx = commands::Context {
        name: cli.command.name(),
        out: cli.out.clone(),
        threads: cli.threads,
        exec: if cli.sequential {
            perchom::exec::Exec::Sequential
        } else {
            perchom::exec::Exec::Parallel
        },
    };
    let name = ctx.name;
    match &cli.command {
        Command::Sample(a) => commands::sample(&ctx, file.merge(name, a)?),
        Command::Conductivity(a) => commands::conductivity(&ctx, file.merge(name, a)?),
        Command::Derivative(a) => commands::derivative(&ctx, file.merge(name, a)?),
        Command::Verify(a) => commands::verify(&ctx, file.merge(name, a)?),
        Command::Walk(a) => commands::walk(&ctx, file.merge(name, a)?),
        Command::Partition(a) => commands::partition(&ctx, file.merge(name, a)?),
        Command::Einstein(a) => commands::einstein(&ctx, file.merge(name, a)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Passed) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(reason)) => {
            eprintln!("perchom: check failed: {reason}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("perchom: error: {e:#}");
            ExitCode::from(1)
        }
    }
}
