//! `infalign`: calibrate rewards, sweep alignment curves, derive optimized
//! transforms, and validate everything against Monte Carlo and brute-force
//! oracles.

mod commands;
mod config;
mod errors;
mod manifest;
mod svg;

use clap::{Parser, Subcommand};


#[derive(Parser)]
#[command(name = "infalign", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score line-delimited reward records with empirical per-prompt
    /// calibration and a reward transform.
    Calibrate(commands::calibrate::Args),
    /// Sweep win-rate vs KL tradeoff curves over a beta grid.
    Curve(commands::curve::Args),
    /// Solve the coupled fixed-point equations for an optimized transform.
    Fixedpoint(commands::fixedpoint::Args),
    /// Compare Monte Carlo estimates against the analytic values.
    Simulate(commands::simulate::Args),
    /// Run the property-verification suites.
    Verify(commands::verify::Args),
}

fn main() -> std::process::ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(args) => commands::calibrate::run(args),
        Command::Curve(args) => commands::curve::run(args),
        Command::Fixedpoint(args) => commands::fixedpoint::run(args),
        Command::Simulate(args) => commands::simulate::run(args),
        Command::Verify(args) => commands::verify::run(args),
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            std::process::ExitCode::from(err.exit_code())
        }
    }
}

/// `INFALIGN_THREADS` caps worker parallelism.
fn configure_threads() {
    if let Ok(value) = std::env::var("INFALIGN_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            if threads >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}
