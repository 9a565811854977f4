use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heavytail_cli::{run, Experiment, Overrides};

#[derive(Parser)]
#[command(name = "heavytail-ou", version, about = "Large deviations of OU time averages: simulation, rare-event estimates and instantons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample time averages and a few full paths.
    Simulate(Common),
    /// Cycle decomposition and return-time statistics.
    Excursions(Common),
    /// Naive tail probabilities and scaled rates.
    Tails(Common),
    /// Finite-horizon instantons and the extrapolated prefactor.
    Instanton(Common),
    /// Run the acceptance criteria.
    Validate(Common),
    /// Compare tail rates with the instanton rate function.
    Report(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, common) = match cli.command {
        Command::Simulate(c) => (Experiment::Simulate, c),
        Command::Excursions(c) => (Experiment::Excursions, c),
        Command::Tails(c) => (Experiment::Tails, c),
        Command::Instanton(c) => (Experiment::Instanton, c),
        Command::Validate(c) => (Experiment::Validate, c),
        Command::Report(c) => (Experiment::Report, c),
    };
    let overrides = Overrides { seed: common.seed, out: common.out };
    match run(experiment, &common.config, &overrides) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("heavytail-ou: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
