use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tagloc::commands::{self, Command, RunOptions};

/// Reproducible experiments for the UWB localization tag: ranging,
/// localization accuracy, energy neutrality and asset classification.
///
/// Exit status: 0 success, 2 configuration error, 3 runtime error.
/// Log verbosity follows TAGLOC_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "tagloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate DS-TWR exchanges and dump the timestamp quads.
    Range(Args),
    /// Ranging, gating and multilateration over true positions.
    Locate(Args),
    /// Power-path simulation and self-discharge sweep over illuminance traces.
    Energy(Args),
    /// Cross-validated location classification.
    Classify(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Check the scenario file and exit without running.
    #[arg(long)]
    validate_only: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TAGLOC_LOG", "warn")).init();
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Range(a) => (Command::Range, a),
        Cmd::Locate(a) => (Command::Locate, a),
        Cmd::Energy(a) => (Command::Energy, a),
        Cmd::Classify(a) => (Command::Classify, a),
    };
    let opts = RunOptions {
        config: args.config,
        seed: args.seed,
        out: args.out,
        validate_only: args.validate_only,
    };
    match commands::run(cmd, &opts) {
        Ok(files) => {
            if opts.validate_only {
                println!("{}: configuration ok", opts.config.display());
            }
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::from(commands::EXIT_OK as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
