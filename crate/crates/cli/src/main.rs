//! `chaos-rates`: simulate, validate, price and calibrate chaos-driven rate models.
//!
//! Exit codes: 0 success, 1 a validation verdict failed, 2 configuration error,
//! 3 runtime error (for example a non-positive kernel).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Outcome, Run};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "chaos-rates", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Kernel paths and ensemble summary: kernel_paths.csv, summary.csv.
    Simulate(Common),
    /// Initial discount curve and forward rates: curve.csv.
    Curve(Common),
    /// Full statistical battery: validation.csv; exits 1 if any verdict fails.
    Validate(Common),
    /// Bond options and cash flows at time 0: prices.csv.
    Price(Common),
    /// First-chaos fit to a discount curve: calibrated_spec.toml, roundtrip.csv.
    Calibrate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Why a run stopped.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl From<chaos_rates::Error> for Failure {
    fn from(e: chaos_rates::Error) -> Self {
        use chaos_rates::Error::*;
        match e {
            NonPositiveKernel { .. } | BankOverflow { .. } | Io(_) => Failure::Runtime(e.to_string()),
            InvalidArgument(_) | DegenerateSpec(_) | DivergentMass(_) | UnsupportedFamily(_) | InvalidCurve(_) => {
                Failure::Config(e.to_string())
            }
        }
    }
}

fn run(cli: Cli) -> Result<Outcome, Failure> {
    let (name, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Curve(c) => ("curve", c),
        Command::Validate(c) => ("validate", c),
        Command::Price(c) => ("price", c),
        Command::Calibrate(c) => ("calibrate", c),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let config = RunConfig::load(&common.config)?;
    let run = Run::new(config, common.out.clone())?;
    run.write_manifest(name, common.threads)?;
    match cli.command {
        Command::Simulate(_) => run.simulate(),
        Command::Curve(_) => run.curve(),
        Command::Validate(_) => run.validate(),
        Command::Price(_) => run.price(),
        Command::Calibrate(_) => run.calibrate(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::ValidationFailed) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(3)
        }
    }
}
