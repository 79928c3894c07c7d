//! Command-line driver for distinguished-curve integration, first-integral
//! verification, operator residual sweeps, tractor transport checks, and
//! zero-locus scans on analytic charts.
//!
//! Every computing subcommand reads one strict TOML run file (see the
//! `config` module for the schema) and writes CSV and JSON under an output
//! directory. Exit codes: 0 on success, 1 when a verification ran and
//! failed, 2 when the curve left its chart early, 3 for bad input of any
//! kind.

mod commands;
mod config;
mod error;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::RunArgs;
use error::{EXIT_BAD_INPUT, EXIT_OK};

#[derive(Parser)]
#[command(
    name = "distcurve",
    version,
    about = "Distinguished curves, tractor transport, and first integrals on analytic charts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured curve; write samples and diagnostics.
    Integrate(RunArgs),
    /// Integrate, then verify each configured first integral.
    Conserve(RunArgs),
    /// Sweep an operator residual over a grid of chart points.
    Residual(RunArgs),
    /// Scan a coordinate box for the zero locus of solution data.
    Scan(RunArgs),
    /// Transport the curve tractor and check it stays parallel.
    Transport(RunArgs),
    /// List the built-in chart catalog.
    Catalog,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are clean exits; anything else is
            // bad input under this tool's exit-code contract.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_BAD_INPUT,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match &cli.command {
        Command::Integrate(args) => commands::cmd_integrate(args),
        Command::Conserve(args) => commands::cmd_conserve(args),
        Command::Residual(args) => commands::cmd_residual(args),
        Command::Scan(args) => commands::cmd_scan(args),
        Command::Transport(args) => commands::cmd_transport(args),
        Command::Catalog => commands::cmd_catalog(),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
