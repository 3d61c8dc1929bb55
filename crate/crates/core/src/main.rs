use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kpi_core::io::{execute, Mode, RunConfig};
use kpi_core::Error;

#[derive(Parser)]
#[command(name = "kpi", version, about = "Kernel-based policy iteration for multi-agent linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Offline policy iteration on the scenario.
    Offline(RunArgs),
    /// Identification followed by receding-horizon control.
    Online(RunArgs),
    /// Penalty-free run against the Riccati solution.
    OracleCompare(RunArgs),
    /// Per-iteration timing over a grid of problem sizes.
    ComplexityProbe(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Offline(a) => (Mode::Offline, a),
        Command::Online(a) => (Mode::Online, a),
        Command::OracleCompare(a) => (Mode::OracleCompare, a),
        Command::ComplexityProbe(a) => (Mode::ComplexityProbe, a),
    };
    let cfg = match RunConfig::load(&args.config).and_then(|c| c.resolve(mode, args.seed)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = args.out.unwrap_or_else(|| cfg.output_dir.clone());
    match execute(mode, &cfg, &dir) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            println!("tables written to {}", dir.display());
            if outcome.failed {
                eprintln!("error: run diverged");
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidParameter { .. } | Error::DimensionMismatch { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
