//! `mirrorcbx` command line: run, sweep, validate, list-optimizers.
//!
//! Exit codes: 0 on success, 2 for config problems (including CLI usage
//! errors), 3 for runtime failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mirrorcbx_cli::experiment::{
    run_experiment, summary_json, sweep, write_outputs, write_sweep_outputs,
};
use mirrorcbx_cli::{load_config, HarnessError, Result};

#[derive(Parser)]
#[command(name = "mirrorcbx", version, about = "Consensus-based optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its trace CSV and summary JSON.
    Run {
        config: PathBuf,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's number of runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Rerun a config across several values of one field.
    Sweep {
        config: PathBuf,
        /// Dot-separated field path, e.g. params.sigma.
        #[arg(long)]
        param: String,
        /// Comma-separated values to substitute.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// List the optimizer kinds configs can name.
    ListOptimizers,
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ HarnessError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e @ HarnessError::Runtime(_)) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}

/// Apply MIRRORCBX_THREADS before any parallel work. A serial build still
/// validates the value so the variable is never silently wrong.
fn configure_threads() -> Result<()> {
    let raw = match std::env::var("MIRRORCBX_THREADS") {
        Ok(raw) => raw,
        Err(_) => return Ok(()),
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            HarnessError::Config(format!(
                "MIRRORCBX_THREADS must be a positive integer, got {raw:?}"
            ))
        })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| HarnessError::Runtime(format!("thread pool setup failed: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Run { config, seed, runs, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(runs) = runs {
                cfg.n_runs = runs;
                cfg.validate()?;
            }
            let outcome = run_experiment(&cfg)?;
            let (csv_path, summary_path) = write_outputs(&cfg, &outcome, &out)?;
            eprintln!("wrote {} and {}", csv_path.display(), summary_path.display());
            println!("{}", summary_json(&outcome.summary)?);
            Ok(())
        }
        Command::Sweep { config, param, values, out } => {
            let outcome = sweep(&config, &param, &values)?;
            let (csv_path, summary_path) = write_sweep_outputs(&outcome, &out)?;
            eprintln!("wrote {} and {}", csv_path.display(), summary_path.display());
            for entry in &outcome.entries {
                println!(
                    "{} = {}: success_rate {:?}, mean_l0 {}",
                    param, entry.raw, entry.outcome.summary.success_rate, entry.outcome.summary.mean_l0
                );
            }
            Ok(())
        }
        Command::ListOptimizers => {
            for (kind, what) in [
                ("mirror", "dual-space dynamic through a configurable mirror map"),
                ("cbo", "plain consensus dynamic in primal coordinates"),
                ("projected", "primal step followed by projection onto a set"),
                ("penalized", "constraint violation folded into the consensus weights"),
                ("drift_constrained", "semi-implicit penalty drift with a linear solve"),
                ("combination", "penalized weights plus an implicit constraint correction"),
                ("hypersurface_sphere", "intrinsic unit-sphere dynamic"),
                ("hypersurface_stiefel", "intrinsic Stiefel-manifold dynamic"),
            ] {
                println!("{kind:<20} {what}");
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!(
                "ok: {} ({} runs, {} particles, {} iterations)",
                cfg.experiment, cfg.n_runs, cfg.n_particles, cfg.k_max
            );
            Ok(())
        }
    }
}
