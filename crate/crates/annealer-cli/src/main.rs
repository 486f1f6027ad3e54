//! `annealer` — command line front end for the annealing sampler.
//!
//! Exit codes: 0 = run converged (or command succeeded), 2 = run completed
//! without reaching the unconstrained fixed point, 1 = hard error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use annealer::{load_run_config, run, run_sweep, write_report, Error};

#[derive(Parser)]
#[command(name = "annealer", version, about = "Constrained annealing sampler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one annealing run from a TOML config.
    Run {
        /// Path to the run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override `loop.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override `output.run_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Produce report.csv and final_metrics.json for a finished run.
    Report {
        /// Run directory holding telemetry.jsonl and metrics.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Cartesian product of a parameter grid over a base config.
    Sweep {
        /// Base run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Grid of overrides (TOML, arrays of values per dotted key).
        #[arg(long)]
        grid: PathBuf,
        /// Root directory for sweep-NNNN run directories.
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = load_run_config(&config)?;
            if let Some(seed) = seed {
                cfg.loop_.seed = seed;
            }
            if let Some(out) = out {
                cfg.output.run_dir = out;
            }
            let outcome = run(&cfg)?;
            write_report(&outcome.run_dir)?;
            println!(
                "run {}: steps={} converged={} log_z_hat={:.6} ess_reverse={:.4}",
                outcome.run_dir.display(),
                outcome.metrics.steps,
                outcome.metrics.converged,
                outcome.metrics.log_z_hat,
                outcome.metrics.ess_reverse_frac,
            );
            Ok(if outcome.metrics.converged { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Report { out } => {
            write_report(&out)?;
            println!("report written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, grid, out } => {
            let base = std::fs::read_to_string(&config)?;
            let grid_text = std::fs::read_to_string(&grid)?;
            let outcomes = run_sweep(&base, &grid_text, &out)?;
            let all_converged = outcomes.iter().all(|o| o.metrics.converged);
            for o in &outcomes {
                write_report(&o.run_dir)?;
            }
            println!("sweep complete: {} runs under {}", outcomes.len(), out.display());
            Ok(if all_converged { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
    }
}
