use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tabimpute_cli::commands::{ablate, benchmark, impute, train};
use tabimpute_cli::CliError;

/// Diffusion-model imputation for tabular data.
#[derive(Parser, Debug)]
#[command(name = "tabimpute", version)]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a denoiser on a complete table.
    Train(train::TrainArgs),
    /// Fill missing cells with a trained denoiser.
    Impute(impute::ImputeArgs),
    /// Compare methods over a grid of mask settings.
    Benchmark(benchmark::BenchmarkArgs),
    /// Sampler and architecture ablations.
    Ablate(ablate::AblateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
    let result = catch_unwind(AssertUnwindSafe(|| match &cli.command {
        Command::Train(a) => train::run(a),
        Command::Impute(a) => impute::run(a),
        Command::Benchmark(a) => benchmark::run(a),
        Command::Ablate(a) => ablate::run(a),
    }))
    .unwrap_or_else(|_| Err(CliError::Internal("internal error (panic)".into())));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
