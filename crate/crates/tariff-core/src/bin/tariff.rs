use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tariff_core::error::TariffError;
use tariff_core::scenario::{run_scenario, run_sweep, SweepParameter};

/// Optimal nonlinear electricity tariffs: solve scenarios and run sweeps.
#[derive(Parser)]
#[command(name = "tariff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write the report and tables.
    Solve {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also run the brute-force audits.
        #[arg(long)]
        oracle: bool,
        /// Emit the full tariff instead of the simplified one.
        #[arg(long)]
        full_tariff: bool,
    },
    /// Solve the scenario for each value of a scaling parameter.
    Sweep {
        config: PathBuf,
        /// `H_scale` or `k_scale`.
        #[arg(long)]
        param: String,
        /// Comma-separated scale factors.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn exit_code(e: &TariffError) -> u8 {
    match e {
        TariffError::Config(_) | TariffError::InvalidReservation(_) => 2,
        TariffError::AssumptionViolation { .. } => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), TariffError> {
    match cli.command {
        Command::Solve {
            config,
            out,
            oracle,
            full_tariff,
        } => {
            let report = run_scenario(&config, &out, oracle, full_tariff)?;
            println!(
                "{}: principal utility {:.10} (relaxed {:.10}), participation {:?}",
                report.solver, report.principal_utility, report.relaxed_value, report.participation
            );
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let parameter: SweepParameter = param.parse()?;
            let rows = run_sweep(&config, parameter, &values, &out)?;
            println!("{} points written to {}", rows.len(), out.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
