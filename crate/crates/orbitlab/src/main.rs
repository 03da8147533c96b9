use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orbitlab::config::{Experiment, ExperimentConfig};
use orbitlab::{run, validate, CliError, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "orbitlab", version, about = "Periodic orbits near a normally non-degenerate minimum")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and print the parameter ledger.
    Validate { config: PathBuf },
    /// Run the experiment named in the config.
    Run { config: PathBuf },
    /// Symplectic eigenvalues over the base grid, whatever experiment the config names.
    Spectrum {
        config: PathBuf,
        /// Points per torus axis.
        #[arg(long)]
        grid: Option<usize>,
    },
}

fn exec(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = validate::validate(&cfg);
            print!("{report}");
            Ok(if report.ok() { 0 } else { EXIT_CONFIG })
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run::run(&cfg)?;
            for line in &report.lines {
                println!("{line}");
            }
            Ok(report.exit_code)
        }
        Command::Spectrum { config, grid } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let grid = match (grid, &cfg.experiment) {
                (Some(g), _) => g,
                (None, Experiment::Spectrum { grid }) => *grid,
                (None, _) => 8,
            };
            cfg.experiment = Experiment::Spectrum { grid };
            let report = run::run(&cfg)?;
            for line in &report.lines {
                println!("{line}");
            }
            Ok(report.exit_code)
        }
    }
}

fn main() -> ExitCode {
    match exec(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
