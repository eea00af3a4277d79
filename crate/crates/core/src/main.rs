use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seeds_core::harness::{
    emit_estimates, emit_results, estimate_command, run_study, write_dataset, EstimateConfig,
    GenConfig, Options, StudyConfig,
};
use seeds_core::simgen::generate;
use seeds_core::SeedsError;

#[derive(Parser)]
#[command(name = "seeds", version, about = "Semi-supervised survival estimation from doubly-censored data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replicated simulation study; writes per-point metrics
    Simulate(Options),
    /// SEEDS and CSL curves for one labeled/unlabeled dataset
    Estimate(Options),
    /// Draw one dataset from a simulation setting and write it as CSV
    Gen(Options),
}

fn exit_code(e: &SeedsError) -> u8 {
    match e {
        SeedsError::Config(_) | SeedsError::InvalidParameter(_) => 2,
        SeedsError::Io(_)
        | SeedsError::Parse { .. }
        | SeedsError::InvariantViolation { .. }
        | SeedsError::MissingLabel { .. }
        | SeedsError::NoLabeled
        | SeedsError::EmptyData
        | SeedsError::DimensionMismatch { .. }
        | SeedsError::DegenerateSample
        | SeedsError::NonpositiveBandwidth(_) => 3,
        _ => 4,
    }
}

fn simulate(options: Options) -> Result<u8, SeedsError> {
    let config = StudyConfig::from_options(&Options::resolve(options)?)?;
    let out = run_study(&config)?;
    let path = config.out.clone().unwrap_or_else(|| "results.csv".into());
    emit_results(&out.table, config.format, &path)?;
    let failed = out.replications.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} replications failed entirely", config.reps);
    }
    if out.table.exceeds_failure_policy() {
        eprintln!("more than half of the grid points are unreliable");
        return Ok(4);
    }
    Ok(0)
}

fn estimate(options: Options) -> Result<u8, SeedsError> {
    let config = EstimateConfig::from_options(&Options::resolve(options)?)?;
    let report = estimate_command(&config)?;
    let path = config.out.clone().unwrap_or_else(|| "estimates.csv".into());
    emit_estimates(&report, config.format, &path)?;
    if report.is_empty_result() {
        eprintln!("no grid point produced an estimate");
        return Ok(4);
    }
    Ok(0)
}

fn gen(options: Options) -> Result<u8, SeedsError> {
    let config = GenConfig::from_options(&Options::resolve(options)?)?;
    let data = generate(&config.setting, config.n, config.big_n, config.seed)?;
    write_dataset(&data.dataset, &config.out_prefix)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(o) => simulate(o),
        Command::Estimate(o) => estimate(o),
        Command::Gen(o) => gen(o),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
