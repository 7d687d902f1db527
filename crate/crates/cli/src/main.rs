//! `kfp`: batch driver for the spectral solver, the Picard iteration, the
//! tracking optimizer, the particle cross-check, and the verification suite.
//!
//! Exit codes: 0 success, 1 other failure (including failed checks in
//! `verify`), 2 invalid configuration, 3 solver blow-up, 4 optimizer stall.

mod compare;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kfp_core::KfpError;

use config::{Mode, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] KfpError),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Core(KfpError::BlowUp { .. }) => 3,
            CliError::Core(
                KfpError::InvalidDomain(_)
                | KfpError::InvalidParameter { .. }
                | KfpError::DomainMismatch(_)
                | KfpError::NegativeDensity { .. },
            ) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(KfpError::Io(e))
    }
}

#[derive(Parser, Debug)]
#[command(name = "kfp", version, about = "Kinetic Fokker-Planck spectral solver and tracking control")]
struct Cli {
    /// TOML run configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted `key=value` patch applied on top of the config, repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Nonlinear forward solve with a prescribed control.
    Simulate,
    /// Picard fixed-point solve with the feasibility report.
    Picard,
    /// Projected-gradient tracking control with the uniqueness certificate.
    Optimize,
    /// Particle ensembles compared against the kinetic solution.
    Particles,
    /// Randomized identity and inequality checks plus estimated constants.
    Verify,
    /// Diff the CSV artifacts of two runs; a third run adds convergence ratios.
    Compare {
        a: PathBuf,
        b: PathBuf,
        c: Option<PathBuf>,
    },
}

fn load(cli: &Cli, mode: Mode) -> Result<RunConfig, CliError> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Validation(format!("--config: {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = vec![format!("mode=\"{}\"", mode.name())];
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    overrides.extend(cli.overrides.iter().cloned());
    let mut cfg = RunConfig::from_toml(&text, &overrides)?;
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.verb {
        Verb::Compare { a, b, c } => compare::compare(a, b, c.as_deref(), cli.out.as_deref()).map(|_| 0),
        verb => {
            let mode = match verb {
                Verb::Simulate => Mode::Simulate,
                Verb::Picard => Mode::Picard,
                Verb::Optimize => Mode::Optimize,
                Verb::Particles => Mode::Particles,
                Verb::Verify => Mode::Verify,
                Verb::Compare { .. } => unreachable!(),
            };
            load(&cli, mode).and_then(|cfg| run::run(&cfg))
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
