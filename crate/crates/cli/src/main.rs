//! `fmgm`: simulate → steps → fit → evaluate, plus `reproduce` for the
//! small-scale benchmark.

mod evaluate;
mod files;
mod fit;
mod reproduce;
mod settings;
mod simulate;
mod steps;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit status when penalty selection had to fall back to the largest λ for
/// some class.
pub const EXIT_FALLBACK: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "fmgm", version, about = "Fused mixed graphical models for two-class data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a two-class ground truth and Gibbs-sample a dataset from it.
    Simulate(simulate::Args),
    /// Select the six penalties by subsampling stability.
    Steps(steps::Args),
    /// Fit the fused model and write edge lists.
    Fit(fit::Args),
    /// Score estimated edge lists against a simulated truth.
    Evaluate(evaluate::Args),
    /// Repeat simulate, steps, fit and evaluate, also for the separate-fit
    /// baseline, and summarize.
    Reproduce(reproduce::Args),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => settings::init_threads(&a.runtime).and_then(|_| simulate::run(&a)),
        Command::Steps(a) => settings::init_threads(&a.runtime).and_then(|_| steps::run(&a)),
        Command::Fit(a) => settings::init_threads(&a.runtime).and_then(|_| fit::run(&a)),
        Command::Evaluate(a) => evaluate::run(&a),
        Command::Reproduce(a) => settings::init_threads(&a.runtime).and_then(|_| reproduce::run(&a)),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
