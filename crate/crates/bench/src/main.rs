use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sinkgraph_bench::commands::{run, Command};

#[derive(Parser)]
#[command(
    name = "sinkgraph",
    version,
    about = "Sinkhorn-regularised GAN experiments and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the denoising GAN once.
    Denoise(Common),
    /// Train one Sinkhorn-GAN arm per epsilon on identical data.
    EpsSweep(Common),
    /// Entropic OT solver accuracy against the LP optimum.
    OtBench(Common),
    /// Key-path multiplication counts of one attention head.
    AttnBench(Common),
    /// Finite-difference gradient checks.
    CheckGrads(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Denoise(c) => (Command::Denoise, c),
        Cmd::EpsSweep(c) => (Command::EpsSweep, c),
        Cmd::OtBench(c) => (Command::OtBench, c),
        Cmd::AttnBench(c) => (Command::AttnBench, c),
        Cmd::CheckGrads(c) => (Command::CheckGrads, c),
    };
    match run(command, common.config.as_deref(), common.seed, &common.out) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
