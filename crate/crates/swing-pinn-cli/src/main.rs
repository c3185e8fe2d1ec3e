//! Command-line pipeline for swing-equation PINN studies.
//!
//! Exit codes: 0 success, 1 runtime failure (solver, training, I/O during a
//! run), 2 usage or configuration error.

// Validation guards use `!(x > 0)` rather than `x <= 0` so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::{Overrides, RunConfig, SeedTarget};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "swing-pinn",
    version,
    about = "Swing-equation transient stability with physics-informed neural networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// System preset (1bus or 2bus); overrides the config.
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Seed override: dataset seed for generate/evaluate, training seed for
    /// train, ensemble master seed for ensemble.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Primary output path (defaults under output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Concurrent member trainings for `ensemble` (any value yields
    /// identical results).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct DataArg {
    /// Existing dataset CSV; generated from the config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth trajectory dataset CSV.
    Generate,
    /// Train a single model; writes the model JSON and a loss-history CSV.
    Train(DataArg),
    /// Train the ensemble and write the posterior report JSON.
    Ensemble {
        #[command(flatten)]
        data: DataArg,
        /// Drop diverged members instead of failing.
        #[arg(long)]
        skip_divergent: bool,
    },
    /// Angle-error metrics of a trained model on held-out trajectories.
    Evaluate {
        /// Trained model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Held-out trajectory count.
        #[arg(long, default_value_t = 10)]
        n_heldout: usize,
    },
    /// Emit plot-ready CSV: posterior density (--report) or
    /// predicted-vs-exact angles (--model + --data).
    PlotData {
        /// Ensemble report JSON: emits the Gaussian density curve.
        #[arg(long, conflicts_with_all = ["model", "data"])]
        report: Option<PathBuf>,
        /// Trained model JSON: emits angle comparisons (needs --data).
        #[arg(long, requires = "data")]
        model: Option<PathBuf>,
        /// Dataset CSV with the exact trajectories.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Trajectory indices to plot.
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2, 3])]
        trajectories: Vec<usize>,
    },
    /// Print the fully resolved configuration and exit.
    ShowConfig,
}

/// Errors before any work starts are usage errors (exit 2); failures during
/// the run are runtime errors (exit 1).
fn dispatch(cli: Cli) -> Result<(), (u8, anyhow::Error)> {
    let usage = |e: anyhow::Error| (2u8, e);
    let runtime = |e: anyhow::Error| (1u8, e);

    let overrides = Overrides {
        preset: cli.preset.clone(),
        seed: cli.seed,
        jobs: cli.jobs,
    };
    let resolve = |target: SeedTarget| {
        RunConfig::resolve(cli.config.as_deref(), &overrides, target).map_err(usage)
    };

    match cli.command {
        Command::Generate => {
            let cfg = resolve(SeedTarget::Dataset)?;
            commands::generate(&cfg, cli.out).map_err(runtime)
        }
        Command::Train(data) => {
            let cfg = resolve(SeedTarget::Train)?;
            commands::train_single(&cfg, data.data.as_deref(), cli.out).map_err(runtime)
        }
        Command::Ensemble {
            data,
            skip_divergent,
        } => {
            let cfg = resolve(SeedTarget::EnsembleMaster)?;
            commands::ensemble(&cfg, data.data.as_deref(), cli.out, skip_divergent)
                .map_err(runtime)
        }
        Command::Evaluate { model, n_heldout } => {
            let cfg = resolve(SeedTarget::Dataset)?;
            commands::evaluate(&cfg, &model, n_heldout, cli.seed, cli.out).map_err(runtime)
        }
        Command::PlotData {
            report,
            model,
            data,
            trajectories,
        } => {
            let out = cli
                .out
                .ok_or_else(|| anyhow::anyhow!("plot-data requires --out"))
                .map_err(usage)?;
            match (report, model, data) {
                (Some(report), None, None) => {
                    commands::plot_gaussian(&report, &out).map_err(runtime)
                }
                (None, Some(model), Some(data)) => {
                    commands::plot_angles(&model, &data, &trajectories, &out).map_err(runtime)
                }
                _ => Err(usage(anyhow::anyhow!(
                    "plot-data needs either --report or (--model and --data)"
                ))),
            }
        }
        Command::ShowConfig => {
            let cfg = resolve(SeedTarget::Dataset)?;
            commands::echo_config(&cfg).map_err(runtime)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("SWINGPINN_LOG")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
