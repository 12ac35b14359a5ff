use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pillar_qed::Error;

mod commands;

/// Reflection spectra, interferometric phase and design sweeps for a
/// quantum dot in a pillar microcavity.
///
/// Verbosity follows the `PILLAR_QED_LOG` environment variable
/// (`error`, `warn`, `info`, `debug`, `trace`; default `warn`).
#[derive(Debug, Parser)]
#[command(name = "pillar-qed", version)]
pub struct Cli {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for synthetic noise.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Power fraction of the coherent background.
    #[arg(long, global = true, value_name = "B")]
    pub background: Option<f64>,
    /// Energy grid, e.g. `1333.496meV:1333.696meV:2001`.
    #[arg(long, global = true, value_name = "START:STOP:N")]
    pub grid: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic empty and coupled spectra, phases and channel tables.
    Synth,
    /// Fit the model to a reflection spectrum and write `fit_report.txt`.
    Fit {
        /// Spectrum CSV (`omega_ueV,value`) with the measured reflectivity.
        spectrum: PathBuf,
        /// Optional measured phase spectrum fitted jointly.
        #[arg(long, value_name = "PATH")]
        phase: Option<PathBuf>,
        /// Treat the spectrum as an empty-cavity measurement.
        #[arg(long)]
        empty: bool,
        /// Exit 0 and keep the report even if the optimizer did not converge.
        #[arg(long)]
        allow_nonconverged: bool,
    },
    /// Extract the phase from an H/V/D/A channel table.
    Phase {
        /// Channel CSV (`omega_ueV,h,v,d,a`).
        channels: PathBuf,
    },
    /// Synthesize a temperature scan: one CSV per temperature plus a manifest.
    Scan,
    /// Sweep the top outcoupling rate and write `design.csv`.
    Design,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Io { .. } | Error::InvalidParameter { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PILLAR_QED_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Model(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(commands::Failure::NotConverged) => {
            eprintln!("error: fit did not converge (pass --allow-nonconverged to accept it)");
            ExitCode::from(2)
        }
    }
}
