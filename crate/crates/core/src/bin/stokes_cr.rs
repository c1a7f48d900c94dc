//! Command-line front end for the convergence studies.
//!
//! `stokes-cr <experiment>` runs one study and renders its table, either as
//! CSV for downstream tooling or as an aligned listing for reading. Exit
//! codes: 0 on success, 2 for configurations the runners reject, 1 for
//! internal failures such as a singular system or an unwritable output path.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use stokes_cr::experiments::{run, Experiment, ExperimentConfig};
use stokes_cr::Error;

#[derive(Parser)]
#[command(name = "stokes-cr", version, about = "Convergence studies for a \
nonconforming Stokes discretization and its pressure-robust variant")]
struct Cli {
    /// Study to run: smooth, anisotropic, rough-pressure, or rough-load.
    experiment: String,

    /// Finest refinement level.
    #[arg(long, value_name = "N")]
    nmax: Option<u32>,

    /// Stretch factors for the anisotropic study, comma separated.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    m: Option<Vec<u32>>,

    /// Discretizations to run: std, mod, or both.
    #[arg(long, value_name = "SCHEME")]
    scheme: Option<String>,

    /// Realization of the elementwise corrections: direct or piola.
    #[arg(long, value_name = "KIND")]
    sk: Option<String>,

    /// Write the table to this file instead of standard output.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Table rendering.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Pretty,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(err)) => {
            eprintln!("stokes-cr: {err}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("stokes-cr: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Failures split by exit code: rejected configurations versus everything
/// that went wrong while computing or writing.
enum Failure {
    Config(Error),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(err: Error) -> Failure {
        match err {
            Error::InvalidConfig(_) => Failure::Config(err),
            other => Failure::Internal(other.to_string()),
        }
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let experiment: Experiment = cli.experiment.parse()?;
    let mut config = ExperimentConfig::new(experiment);
    if let Some(n) = cli.nmax {
        config.n_max = n;
    }
    if let Some(m) = cli.m {
        config.m = m;
    }
    if let Some(scheme) = &cli.scheme {
        config.scheme = scheme.parse()?;
    }
    if let Some(sk) = &cli.sk {
        config.sk = sk.parse()?;
    }
    config.out = cli.out;

    let table = run(&config)?;
    let text = match cli.format {
        Format::Csv => table.to_csv(),
        Format::Pretty => table.to_pretty(),
    };
    match &config.out {
        Some(path) => std::fs::write(path, &text)
            .map_err(|err| Failure::Internal(format!("cannot write {}: {err}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(())
}
