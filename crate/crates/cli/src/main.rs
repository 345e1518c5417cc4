use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};
use qchaos::{execute, RunArgs, Subcommand};

#[derive(Parser)]
#[command(name = "qchaos", version, about = "Classical and quantum-action chaos experiments")]
enum Cli {
    /// Poincaré sections of sampled orbits
    Poincare(Common),
    /// Finite-time Lyapunov exponents, histograms and moments
    LyapDist(Common),
    /// Chaotic fraction of each energy shell
    Ratio(Common),
    /// Fit the quantum action to propagator amplitudes
    FitQaction(Common),
    /// Imaginary-time amplitude table and ground-state energy
    Propagate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to QCHAOS_THREADS
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let (sub, c) = match Cli::parse() {
        Cli::Poincare(c) => (Subcommand::Poincare, c),
        Cli::LyapDist(c) => (Subcommand::LyapDist, c),
        Cli::Ratio(c) => (Subcommand::Ratio, c),
        Cli::FitQaction(c) => (Subcommand::FitQaction, c),
        Cli::Propagate(c) => (Subcommand::Propagate, c),
    };
    let args = RunArgs {
        config: c.config,
        seed: c.seed,
        threads: c.threads,
        out: c.out,
    };
    match execute(sub, &args) {
        Ok(files) => {
            for f in files {
                println!("{f}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qchaos {}: {e}", sub.name());
            ExitCode::FAILURE
        }
    }
}
