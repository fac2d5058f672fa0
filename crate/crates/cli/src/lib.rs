//! Command-line front end for the `floc` detector: CSV ingestion,
//! detection with statistic traces, threshold calibration, synthetic data
//! and the simulation studies.
//!
//! Calibration, scenario and report files share a flat `key = value`
//! format (see [`kv`]); exit status 2 marks usage errors and 3 marks I/O
//! or parse errors.

pub mod args;
pub mod commands;
pub mod error;
pub mod experiment;
pub mod input;
pub mod kv;

use std::path::Path;

use args::{Cli, Command};
use error::{CliError, CliResult};

pub fn execute(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot start {n} threads: {e}")))?;
    }
    match &cli.command {
        Command::Detect(a) => {
            let report = commands::cmd_detect(a)?;
            commands::emit(None, &report.render())
        }
        Command::Calibrate(a) => {
            let (text, result) = commands::cmd_calibrate(a)?;
            commands::emit(a.out.as_deref(), &text)?;
            eprintln!(
                "floc: empirical false-alarm fraction {} over {} replications (seed {})",
                result.empirical_fa, result.spec.replications, result.spec.master_seed
            );
            Ok(())
        }
        Command::Simulate(a) => {
            let truth = commands::cmd_simulate(a)?;
            eprintln!("floc: wrote {} and {}", a.out.display(), truth.display());
            Ok(())
        }
        Command::Experiment(a) => {
            let text = experiment::cmd_experiment(a)?;
            commands::emit(None::<&Path>, &text)
        }
    }
}
