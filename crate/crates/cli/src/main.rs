//! `rcmdp`: solve, train and evaluate robust constrained MDPs from TOML
//! configs. Each seed writes into its own `seed-N` directory.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

mod compare;
mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use config::{parse_seeds, Command, ExperimentConfig};
use output::RunDir;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl From<rcmdp::Error> for CliError {
    fn from(e: rcmdp::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rcmdp", version, about = "Robust constrained MDP experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed list: `3`, `1,2,5` or `0..20`; overrides `seeds` in the config.
    #[arg(long, value_parser = |s: &str| parse_seeds(s).map(SeedList))]
    seed: Option<SeedList>,
}

#[derive(Debug, Clone)]
struct SeedList(Vec<u64>);

#[derive(Debug, Subcommand)]
enum Verb {
    /// Robust value iteration on `r + λd` and its greedy policy.
    Solve(RunArgs),
    /// Robust-constrained policy gradient.
    TrainRcpg(RunArgs),
    /// Robust-constrained actor-critic.
    TrainRcac(RunArgs),
    /// Robust evaluation of a stored policy.
    Eval(RunArgs),
    /// Writes the Lyapunov-shaped model.
    Shape(RunArgs),
    /// Checks that shaping keeps the optimal policies on a finite horizon.
    InvarianceTest(RunArgs),
    /// Compares training runs.
    Compare {
        /// Run directories (each holding `seed-N` runs), first is the reference.
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of the final return that counts as reached.
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
    },
}

fn run_verb(command: Command, args: RunArgs) -> Result<(), CliError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(SeedList(seeds)) = args.seed {
        config.seeds = seeds;
    }
    let out = args
        .out
        .or_else(|| config.out.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set `out`".into()))?;
    config.validate(command)?;
    // surface model errors once, before fanning out
    config.models()?;

    let results: Vec<Result<run::Summary, CliError>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let dir = RunDir::create(out.join(format!("seed-{seed}")))?;
            log::info!("{} seed {seed} -> {}", command.name(), dir.path().display());
            run::run_seed(&config, command, seed, &dir)
        })
        .collect();
    let mut first_err = None;
    for (seed, r) in config.seeds.iter().zip(results) {
        match r {
            Ok(s) => log::info!(
                "seed {seed}: rho_r {:?} rho_d {:?} feasible {:?}",
                s.rho_r,
                s.rho_d,
                s.feasible
            ),
            Err(e) => {
                log::error!("seed {seed}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RCMDP_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.verb {
        Verb::Solve(a) => run_verb(Command::Solve, a),
        Verb::TrainRcpg(a) => run_verb(Command::TrainRcpg, a),
        Verb::TrainRcac(a) => run_verb(Command::TrainRcac, a),
        Verb::Eval(a) => run_verb(Command::Eval, a),
        Verb::Shape(a) => run_verb(Command::Shape, a),
        Verb::InvarianceTest(a) => run_verb(Command::InvarianceTest, a),
        Verb::Compare { runs, out, threshold } => {
            RunDir::create(out).and_then(|dir| compare::compare(&runs, threshold, &dir).map(|_| ()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rcmdp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
