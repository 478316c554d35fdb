//! `skycal` — Poisson Bayesian calibration of expensive simulators with a
//! sparse Gaussian-process surrogate.
//!
//! Every subcommand reads the run configuration (a TOML file via
//! `--config`, with documented defaults for everything omitted), applies
//! the global flag overrides, and writes its outputs into one directory
//! with a `MANIFEST` of content hashes. Reruns with identical config,
//! seed, and thread count reproduce every hashed byte; wall-clock
//! measurements live in `timings.csv`, which the manifest names but does
//! not hash.
//!
//! Exit codes: 0 on success, 2 on validation failures (bad config, bad
//! input files), 3 on numerical failures, 64 on usage errors.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use skycal::experiments::SweepAxis;
use skycal::{Error, ErrorCategory};

mod commands;
mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "skycal",
    version,
    about = "Poisson Bayesian calibration with a sparse Gaussian-process surrogate"
)]
struct Cli {
    /// Run configuration file (TOML). Omitted sections take the documented
    /// defaults; flags below override the file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; every random stream derives from it (default: 0).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker-pool size (default: one worker per core).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Output directory (default: out).
    #[arg(long, global = true, value_name = "PATH")]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the surrogate to the simulator corpus and persist it
    Fit,
    /// Krige the sky map at one parameter setting over the corpus grid
    Predict,
    /// Invert field observations for the simulator parameters by MCMC
    Calibrate {
        /// Sample a discrepancy factor alongside the parameters
        #[arg(long, value_enum, value_name = "MODEL")]
        discrepancy: Option<DiscrepancyModel>,
        /// Also write randomized-PIT diagnostics (pit.csv)
        #[arg(long)]
        pit: bool,
    },
    /// Draw a synthetic Poisson field from one corpus run's rate map
    Synth,
    /// Hold-one-out surrogate benchmark over the corpus (sparse vs dense)
    Holdout,
    /// Cross-validated CRPS grids over the parameter domain
    Cv,
    /// Timing sweep over problem size
    Bench {
        /// Sweep axis (default: from the config, initially grid)
        #[arg(long, value_enum, value_name = "AXIS")]
        axis: Option<BenchAxis>,
        /// Sweep sizes: a comma list (100,200,400), lo..hi stepped by lo
        /// (10..100 gives 10, 20, ..., 100), or lo..hi:step
        #[arg(long, value_name = "SIZES")]
        sizes: Option<String>,
    },
    /// End-to-end demonstration on the built-in toy problem
    Toy,
}

/// Discrepancy models `calibrate --discrepancy` can sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DiscrepancyModel {
    /// One multiplicative factor on the simulated rates, log-normal prior.
    Multiplicative,
}

/// Sweep axes for `bench --axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchAxis {
    /// Grow the sky grid (response dimension) at a fixed run count.
    Grid,
    /// Grow the run count at a fixed sky grid.
    Runs,
}

impl BenchAxis {
    fn into_sweep(self) -> SweepAxis {
        match self {
            BenchAxis::Grid => SweepAxis::ResponseDimension,
            BenchAxis::Runs => SweepAxis::RunCount,
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; only real usage errors
            // take the scripting exit code.
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = match e.category() {
            ErrorCategory::Validation => 2,
            ErrorCategory::Numerical => 3,
        };
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> skycal::Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    config.apply_overrides(cli.seed, cli.threads, cli.out_dir);
    config.validate()?;
    if let Some(n) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::validation(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::Fit => commands::cmd_fit(&config),
        Command::Predict => commands::cmd_predict(&config),
        Command::Calibrate { discrepancy, pit } => {
            commands::cmd_calibrate(&config, discrepancy.is_some(), pit)
        }
        Command::Synth => commands::cmd_synth(&config),
        Command::Holdout => commands::cmd_holdout(&config),
        Command::Cv => commands::cmd_cv(&config),
        Command::Bench { axis, sizes } => {
            let sizes = sizes.as_deref().map(commands::parse_sizes).transpose()?;
            commands::cmd_bench(&config, axis.map(BenchAxis::into_sweep), sizes)
        }
        Command::Toy => commands::cmd_toy(&config),
    }
}
