//! `riccilab`: run geometric flows with spectral monitors, verify the
//! monotonicity and identity checks, and plot the resulting series.

mod config;
mod csvio;
mod plot;
mod runcmd;

use clap::{Parser, Subcommand};
use runcmd::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "riccilab",
    version,
    about = "Ricci-flow laboratory: evolve conformal torus and round-sphere metrics, monitor the lowest eigenvalue of -4Δ + kR, and verify its monotonicity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a configured flow and write the monitored series (CSV) plus
    /// a JSON manifest echoing the resolved configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the verification suite (default or configured) and write a JSON
    /// report. Exits 0 only if every counted check passes.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render a static SVG (one pane per monitored series) from a run CSV.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the cartesian sweep over the configured s values, one output
    /// subdirectory per member, concurrently.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), CliError> = match &cli.command {
        Command::Run { config } => runcmd::cmd_run(config),
        Command::Verify { config } => runcmd::cmd_verify(config.as_deref()),
        Command::Plot { input, output } => runcmd::cmd_plot(input, output),
        Command::Sweep { config } => runcmd::cmd_sweep(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("riccilab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
