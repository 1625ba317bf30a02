//! `bandit-lab`: configuration, experiment subcommands and acceptance
//! suites on top of `social-bandits`.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod verify;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::CommonArgs;
use error::{CliError, CliResult};
use verify::{Suite, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "bandit-lab", version, about = "Monte Carlo laboratory for bandit social learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ExperimentArgs {
    /// TOML experiment configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set estimator.trials=1000`
    /// or `--set population.0.eta=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `estimator.master_seed`).
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads. Defaults to $BANDIT_LAB_PARALLELISM, then the config, then 1.
    #[arg(long, value_name = "N")]
    pub parallelism: Option<usize>,
}

impl From<&ExperimentArgs> for CommonArgs {
    fn from(a: &ExperimentArgs) -> Self {
        CommonArgs {
            config: a.config.clone(),
            set: a.set.clone(),
            out: a.out.clone(),
            seed: a.seed,
            parallelism: a.parallelism,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate failure probability and regret at the configured point.
    Simulate(ExperimentArgs),
    /// Run the configured grid, one row per point and estimate.
    Sweep {
        #[command(flatten)]
        args: ExperimentArgs,
        /// Keep finished rows of an earlier run with the same configuration.
        #[arg(long)]
        resume: bool,
    },
    /// Exact values by enumerating every reward tape.
    Oracle(ExperimentArgs),
    /// Run acceptance suites; one JSON line per check.
    Verify {
        #[arg(required = true, value_name = "SUITE")]
        suites: Vec<Suite>,
        /// Multiplier on every trial budget.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_name = "N")]
        parallelism: Option<usize>,
    },
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Simulate(a) => {
            let r = commands::resolve(&(&a).into())?;
            report(commands::cmd_simulate(&r)?);
            Ok(0)
        }
        Command::Sweep { args, resume } => {
            let r = commands::resolve(&(&args).into())?;
            report(commands::cmd_sweep(&r, resume)?);
            Ok(0)
        }
        Command::Oracle(a) => {
            let r = commands::resolve(&(&a).into())?;
            report(commands::cmd_oracle(&r)?);
            Ok(0)
        }
        Command::Verify {
            suites,
            scale,
            seed,
            parallelism,
        } => {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(CliError::Usage(format!("--scale {scale} must be positive")));
            }
            let opts = VerifyOptions {
                scale,
                seed,
                parallelism: commands::verify_parallelism(parallelism)?,
            };
            let checks = commands::cmd_verify(&suites, &opts, &mut std::io::stdout().lock())?;
            Ok(if checks.iter().all(|c| c.pass) { 0 } else { 1 })
        }
    }
}

fn report(r: commands::RunReport) {
    if r.resumed_points > 0 {
        eprintln!("resumed after {} finished points", r.resumed_points);
    }
    eprintln!("wrote {} rows to {}", r.rows, r.result_file.display());
    eprintln!("manifest: {}", r.manifest_file.display());
}
