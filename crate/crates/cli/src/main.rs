mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qmri_core::QmriError;

use crate::config::{config_error, ConfigError, MethodConfig, RunConfig};

#[derive(Parser)]
#[command(name = "qmri", version, about = "Quantitative MRI parameter mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Run configuration (JSON).
    config: PathBuf,
    /// Noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reconstruction method: mrf, blip, gn or lm.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom and synthesize k-space data.
    Simulate(Overrides),
    /// Build and cache the fingerprint dictionary.
    Dict(Overrides),
    /// Estimate parameter maps from k-space data.
    Reconstruct(Overrides),
    /// Tabulate error rates of result directories against a ground truth.
    Compare {
        truth: PathBuf,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(o: &Overrides) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(&o.config)?;
    if let Some(seed) = o.seed {
        cfg.noise.seed = seed;
    }
    if let Some(out) = &o.out {
        cfg.output = out.clone();
    }
    if let Some(name) = &o.method {
        if cfg.method.as_ref().map(MethodConfig::name) != Some(name.as_str()) {
            cfg.method = Some(MethodConfig::with_name(name)?);
        }
    }
    Ok(cfg)
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("QMRI_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| config_error(format!("QMRI_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(o) => commands::simulate(&load(&o)?),
        Command::Dict(o) => commands::dict(&load(&o)?),
        Command::Reconstruct(o) => commands::reconstruct(&load(&o)?),
        Command::Compare { truth, runs, out } => commands::compare(&truth, &runs, out.as_deref()),
    }
}

/// 2 for configuration and input problems, 1 for numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<QmriError>() {
            return match e {
                QmriError::Domain(_) | QmriError::DegenerateTrajectory { .. } | QmriError::CacheMismatch => 1,
                QmriError::Io(_) => 1,
                QmriError::Config(_) | QmriError::Format(_) | QmriError::Json(_) | QmriError::Shape(_) => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
