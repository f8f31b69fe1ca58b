use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use gdqst_harness::{run_experiment, ExperimentKind, ExperimentSpec, Overrides};

#[derive(Parser)]
#[command(name = "gdqst", version, about = "Gradient-descent quantum state tomography experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct target states with the chosen methods.
    Reconstruct(Args),
    /// Time to reach the fidelity target against register size.
    BenchTime(Args),
    /// Target rank x ansatz rank sweep with per-iteration timing.
    BenchRank(Args),
    /// Fidelity on randomly reduced data sets.
    BenchData(Args),
    /// Depolarizing or Gaussian noise sweep with a rank-1 ansatz.
    BenchNoise(Args),
    /// Cat-state reconstruction from Husimi data, with Wigner grids.
    CvCat(Args),
    /// Batch-size x step-size grid.
    SweepHyper(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML file with the same keys as the flags (snake_case); flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved spec and exit.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    overrides: Overrides,
}

fn run(kind: ExperimentKind, args: Args) -> Result<ExitCode> {
    let file = match &args.config {
        Some(path) => Overrides::load(path)?,
        None => Overrides::default(),
    };
    let spec = ExperimentSpec::resolve(kind, args.overrides.over(file))?;
    if args.dry_run {
        print!("{}", spec.to_toml()?);
        return Ok(ExitCode::SUCCESS);
    }
    let outcome = run_experiment(&spec)?;
    let done = outcome.records.len() - outcome.failed;
    println!(
        "{}: {done}/{} trial runs completed, {} files in {}",
        kind,
        outcome.records.len(),
        outcome.files.len(),
        spec.out_dir.display()
    );
    Ok(if outcome.failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Reconstruct(a) => (ExperimentKind::Reconstruct, a),
        Command::BenchTime(a) => (ExperimentKind::BenchTime, a),
        Command::BenchRank(a) => (ExperimentKind::BenchRank, a),
        Command::BenchData(a) => (ExperimentKind::BenchData, a),
        Command::BenchNoise(a) => (ExperimentKind::BenchNoise, a),
        Command::CvCat(a) => (ExperimentKind::CvCat, a),
        Command::SweepHyper(a) => (ExperimentKind::SweepHyper, a),
    };
    match run(kind, args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
