//! `rednet`: simulate paired networks, analyze them, score the result, and
//! bootstrap edge stability.

mod commands;
mod config;
mod error;
mod io;
mod manifest;

use clap::{ArgAction, Parser, Subcommand};

use commands::{AnalyzeArgs, BootstrapArgs, EvaluateArgs, SimulateArgs};

#[derive(Debug, Parser)]
#[command(name = "rednet", version, about = "Differential analysis of two structural equation networks")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic pair of networks with known differences.
    Simulate(SimulateArgs),
    /// Estimate common and differential edges.
    Analyze(AnalyzeArgs),
    /// Score an edge list against simulated truth.
    Evaluate(EvaluateArgs),
    /// Edge selection frequencies over resampled data.
    Bootstrap(BootstrapArgs),
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Simulate(a) => commands::cmd_simulate(a),
        Command::Analyze(a) => commands::cmd_analyze(a),
        Command::Evaluate(a) => commands::cmd_evaluate(a),
        Command::Bootstrap(a) => commands::cmd_bootstrap(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
