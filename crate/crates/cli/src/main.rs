//! `snlab`: batch front end. Loads a configuration, runs one pipeline and
//! writes `run.record` plus CSV tables to the output directory.
//!
//! Exit codes: 0 success, 1 output not writable, 2 invalid configuration,
//! 3 solver failure, 4 invariant check failed.

mod commands;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use snlab_core::config::{Experiment, ExperimentConfig};
use snlab_core::Error;

use record::RunRecord;

#[derive(Parser, Debug)]
#[command(name = "snlab", version, about = "Leader-follower control of a coupled stochastic heat system")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file (`key = value` lines); built-in defaults if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for per-node parallel sweeps; 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    parallel: u64,

    /// Seed of the random probe generator; overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Follower equilibrium by fixed point and adjoint characterization.
    NashSolve,
    /// Penalised leader problem at the configured epsilon.
    LeaderSolve,
    /// Leader problem over the configured epsilon list.
    EpsilonSweep,
    /// Duality identity on random instances.
    DualityCheck,
    /// Weight tables and their elementary bounds.
    WeightsReport,
    /// Rayleigh quotients of the observability inequality.
    Observability,
    /// Iterative solvers against the dense oracle (small configurations).
    OracleCompare,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::NashSolve => "nash-solve",
            Command::LeaderSolve => "leader-solve",
            Command::EpsilonSweep => "epsilon-sweep",
            Command::DualityCheck => "duality-check",
            Command::WeightsReport => "weights-report",
            Command::Observability => "observability",
            Command::OracleCompare => "oracle-compare",
        }
    }
}

fn error_code(e: &Error) -> u8 {
    match e {
        Error::InvalidLattice(_)
        | Error::InvalidLayout(_)
        | Error::InvalidParameter(_)
        | Error::ShapeMismatch(_)
        | Error::BudgetExceeded { .. }
        | Error::DimensionCap { .. } => 2,
        Error::ClampingExceeded { .. }
        | Error::NonContraction { .. }
        | Error::IterationCap { .. }
        | Error::CgStagnation { .. }
        | Error::Observability(_)
        | Error::Singular(_) => 3,
    }
}

fn load(cli: &Cli) -> Result<Experiment, (u8, String)> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| (2, format!("{}: {e}", path.display())))?;
            ExperimentConfig::parse(&text).map_err(|e| (2, format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.build_with(cli.parallel > 1).map_err(|e| (error_code(&e), e.to_string()))
}

fn run(cli: &Cli) -> Result<RunRecord, (u8, String)> {
    let experiment = load(cli)?;
    let mut rec = RunRecord::new(
        cli.command.name(),
        experiment.config.to_ini(),
        experiment.config.seed,
        cli.parallel as usize,
    );
    for w in &experiment.spec.warnings {
        eprintln!("warning: {w}");
    }
    let result = match cli.command {
        Command::NashSolve => commands::nash_solve(&experiment, &mut rec),
        Command::LeaderSolve => commands::leader_solve(&experiment, &mut rec),
        Command::EpsilonSweep => commands::sweep(&experiment, &mut rec),
        Command::DualityCheck => commands::duality_check(&experiment, &mut rec),
        Command::WeightsReport => commands::weights_report(&experiment, &mut rec),
        Command::Observability => commands::observability(&experiment, &mut rec),
        Command::OracleCompare => commands::oracle_compare(&experiment, &mut rec),
    };
    result.map_err(|e| (error_code(&e), e.to_string()))?;
    Ok(rec)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = if cli.parallel > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.parallel as usize)
            .build()
            .map_err(|e| (1, e.to_string()))
            .and_then(|pool| pool.install(|| run(&cli)))
    } else {
        run(&cli)
    };
    let rec = match outcome {
        Ok(rec) => rec,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(code);
        }
    };
    if let Err(e) = rec.write(&cli.out) {
        eprintln!("error: cannot write {}: {e}", cli.out.display());
        return ExitCode::from(1);
    }
    let failed = rec.failed_checks();
    for c in &failed {
        eprintln!("invariant failed: {} {}", c.name, c.detail);
    }
    println!("{}", rec.render().lines().take_while(|l| !l.is_empty()).collect::<Vec<_>>().join("\n"));
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(4)
    }
}
