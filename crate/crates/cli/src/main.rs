//! Command-line experiments for heat-bath Glauber dynamics of the
//! ferromagnetic Ising model on regular trees.
//!
//! Each subcommand reads one flat JSON configuration (flags override
//! fields), writes a versioned CSV report plus a `.meta.json` sidecar, and
//! exits with a code that classifies any failure: `0` success, `2`
//! configuration error, `3` enumeration guard exceeded, `4` a certified
//! inequality was violated by the computed numbers.
//!
//! Reports are byte-identical across runs with the same configuration and
//! seed; only the sidecar (which records wall time) may differ.

mod commands;
mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use treeglass_core::{Error, Result};

use config::{CommonFlags, RunConfig};

/// Exact spectral analysis and bound certification for Glauber dynamics
/// on regular trees.
#[derive(Debug, Parser)]
#[command(name = "treeglass", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact spectral gap of the single-site heat-bath chain.
    ExactGap(ExactGapArgs),
    /// Critical gap against height, with the variational bound and its
    /// fitted growth exponent.
    SweepHeight(SweepHeightArgs),
    /// Near-critical gap against epsilon at fixed height, checked against
    /// the inverse-gap formula.
    SweepBeta(SweepBetaArgs),
    /// Root influence and magnetization against capacity bounds.
    SpatialMixing(SpatialMixingArgs),
    /// Censoring comparison for single-site update schedules.
    Censoring(CensoringArgs),
    /// Block dynamics against decomposition and comparison bounds.
    Blockdyn(BlockdynArgs),
}

#[derive(Debug, clap::Args)]
struct ExactGapArgs {
    #[command(flatten)]
    common: CommonFlags,
}

#[derive(Debug, clap::Args)]
struct SweepHeightArgs {
    #[command(flatten)]
    common: CommonFlags,
    /// Smallest height in the sweep.
    #[arg(long)]
    h_min: Option<u32>,
    /// Largest height in the sweep.
    #[arg(long)]
    h_max: Option<u32>,
}

#[derive(Debug, clap::Args)]
struct SweepBetaArgs {
    #[command(flatten)]
    common: CommonFlags,
    /// Smallest epsilon on the grid (must be positive).
    #[arg(long)]
    eps_min: Option<f64>,
    /// Largest epsilon on the grid.
    #[arg(long)]
    eps_max: Option<f64>,
    /// Number of grid points.
    #[arg(long)]
    eps_points: Option<usize>,
}

#[derive(Debug, clap::Args)]
struct SpatialMixingArgs {
    #[command(flatten)]
    common: CommonFlags,
    /// External field applied at the reconstruction root.
    #[arg(long)]
    field: Option<f64>,
    /// Contraction constant kappa in the capacity bound.
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Debug, clap::Args)]
struct CensoringArgs {
    #[command(flatten)]
    common: CommonFlags,
    /// Fixed schedule length (random in 10..40 when unset).
    #[arg(long)]
    schedule_len: Option<usize>,
    /// Starting configuration; only "plus" is accepted.
    #[arg(long)]
    start: Option<String>,
}

#[derive(Debug, clap::Args)]
struct BlockdynArgs {
    #[command(flatten)]
    common: CommonFlags,
    /// Two-scale split parameter alpha in (0, 1/2).
    #[arg(long)]
    alpha: Option<f64>,
    /// Contraction constant kappa in the formula bound.
    #[arg(long)]
    kappa: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Maps error categories to the documented exit codes: `2` for
/// configuration errors, `3` for enumeration guards, `4` for violated
/// inequalities, `1` for anything else.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Invalid(_) => 2,
        Error::SizeGuard { .. } => 3,
        Error::BoundViolation { .. } => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ExactGap(args) => {
            let cfg = args.common.merged()?;
            execute("exact-gap", cfg, commands::exact_gap)
        }
        Command::SweepHeight(args) => {
            let mut cfg = args.common.merged()?;
            if let Some(x) = args.h_min {
                cfg.h_min = Some(x);
            }
            if let Some(x) = args.h_max {
                cfg.h_max = Some(x);
            }
            execute("sweep-height", cfg, commands::sweep_height)
        }
        Command::SweepBeta(args) => {
            let mut cfg = args.common.merged()?;
            if let Some(x) = args.eps_min {
                cfg.eps_min = Some(x);
            }
            if let Some(x) = args.eps_max {
                cfg.eps_max = Some(x);
            }
            if let Some(x) = args.eps_points {
                cfg.eps_points = Some(x);
            }
            execute("sweep-beta", cfg, commands::sweep_beta)
        }
        Command::SpatialMixing(args) => {
            let mut cfg = args.common.merged()?;
            if let Some(x) = args.field {
                cfg.field = Some(x);
            }
            if let Some(x) = args.kappa {
                cfg.kappa = Some(x);
            }
            execute("spatial-mixing", cfg, commands::spatial_mixing)
        }
        Command::Censoring(args) => {
            let mut cfg = args.common.merged()?;
            if let Some(x) = args.schedule_len {
                cfg.schedule_len = Some(x);
            }
            if let Some(x) = &args.start {
                cfg.start = Some(x.clone());
            }
            execute("censoring", cfg, commands::censoring)
        }
        Command::Blockdyn(args) => {
            let mut cfg = args.common.merged()?;
            if let Some(x) = args.alpha {
                cfg.alpha = Some(x);
            }
            if let Some(x) = args.kappa {
                cfg.kappa = Some(x);
            }
            execute("blockdyn", cfg, commands::blockdyn)
        }
    }
}

/// Runs one command: resolve the output path, compute and write the
/// report, then write the metadata sidecar. An inequality violation is
/// surfaced only after both artifacts are on disk, so a failed run leaves
/// its evidence behind.
fn execute(
    name: &str,
    cfg: RunConfig,
    command: impl FnOnce(&RunConfig, &Path) -> Result<Option<Error>>,
) -> Result<()> {
    let out: PathBuf = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("treeglass-{name}.csv")));
    let started = Instant::now();
    let violation = command(&cfg, &out)?;
    report::write_sidecar(&out, name, &cfg, started.elapsed())?;
    println!("wrote {}", out.display());
    match violation {
        None => Ok(()),
        Some(err) => Err(err),
    }
}
