use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fokker_cli::{execute, Overrides, Subcommand};

/// Two-particle Fokker path-integral engine.
#[derive(Debug, Parser)]
#[command(name = "fokker", version)]
struct Cli {
    /// validate | free-oracle | propagate | modified | sweep
    #[arg(value_enum)]
    subcommand: Subcommand,
    /// For `sweep`: the varied parameter, e.g. `coupling=[0, 0.01, 0.02]`
    sweep: Option<String>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// CSV output path; JSON metadata is written next to it
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.sweep.is_some() && cli.subcommand != Subcommand::Sweep {
        eprintln!("a parameter list is only accepted by `sweep`");
        return ExitCode::from(2);
    }
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out,
        sweep: cli.sweep,
    };
    ExitCode::from(execute(cli.subcommand, &cli.config, &overrides) as u8)
}
