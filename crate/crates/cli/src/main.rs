use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use goodput_core::Error;

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "goodput", version, about = "Deadline-aware LLM request routing: simulation, predictor training and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario under one or more routing policies.
    Simulate(SimulateArgs),
    /// Train a length predictor on a corpus and save a checkpoint.
    TrainPredictor(TrainArgs),
    /// Held-out accuracy of a checkpoint and the baselines.
    EvalPredictor(EvalArgs),
    /// Time the routing decision path at several cluster sizes.
    BenchOverhead(BenchArgs),
    /// Exhaustive optimal assignment for a small scenario.
    BruteForce(BruteArgs),
    /// Write the trace of a scenario, deadlines applied, as JSON lines.
    GenTrace(GenArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Config file or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Manifests are TOML, so seeds stop at the largest 64-bit signed integer.
    #[arg(long, value_parser = seed_parser())]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, conflicts_with = "arms")]
    policy: Option<String>,
    /// Comma-separated policies run on the same trace and seed.
    #[arg(long)]
    arms: Option<String>,
    #[arg(long)]
    slo_scale: Option<f64>,
    /// moe, single-mlp, history, oracle or noisy:<sigma>.
    #[arg(long)]
    predictor: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    no_migration: bool,
    #[arg(long)]
    tau: Option<u32>,
    /// Time every routing decision; makes reports depend on the machine.
    #[arg(long)]
    measure_overhead: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// moe or single-mlp.
    #[arg(long)]
    predictor: Option<String>,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Extra baseline to evaluate next to history.
    #[arg(long)]
    predictor: Option<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Manifest of an earlier benchmark; replaces the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = seed_parser())]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Used when no checkpoint is given; model kinds are trained first.
    #[arg(long, default_value = "moe")]
    predictor: String,
    #[arg(long)]
    experts: Option<usize>,
    /// Comma-separated instance counts.
    #[arg(long, default_value = "8,32,128,512")]
    instances: String,
    #[arg(long, default_value_t = 10_000.0)]
    rps: f64,
    #[arg(long, default_value_t = 10_000)]
    decisions: usize,
    #[arg(long, default_value_t = 256)]
    max_batch: usize,
}

#[derive(Args, Debug)]
struct BruteArgs {
    #[command(flatten)]
    common: Common,
    /// Heuristic compared against the optimum.
    #[arg(long, default_value = "goodserve")]
    policy: String,
    /// Size of the generated scenario when no config is given.
    #[arg(long, default_value_t = 8)]
    requests: usize,
    #[arg(long, default_value_t = 3)]
    instances: usize,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    slo_scale: Option<f64>,
}

fn seed_parser() -> clap::builder::RangedU64ValueParser<u64> {
    clap::value_parser!(u64).range(..=i64::MAX as u64)
}

/// Configuration and validation problems exit with 1, everything else
/// with 2.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Serde(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::TrainPredictor(a) => commands::train_predictor(a),
        Command::EvalPredictor(a) => commands::eval_predictor(a),
        Command::BenchOverhead(a) => commands::bench_overhead(a),
        Command::BruteForce(a) => commands::brute_force(a),
        Command::GenTrace(a) => commands::gen_trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
