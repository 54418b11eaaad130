mod commands;
mod demo;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use tracebench_core::engine::{ExecutorMode, TimingConfig};

/// Benchmark kernel solutions against reference definitions and route calls
/// to the fastest validated one.
#[derive(Debug, Parser)]
#[command(name = "tracebench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse every document in a dataset and list schema violations.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Evaluate every matching solution on every workload and append the traces.
    Bench(BenchArgs),
    /// Write the leaderboard and per-row fast_p curves.
    Report {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the dispatch index from the dataset's evaluations.
    BuildIndex {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop evaluations whose max relative error exceeds this.
        #[arg(long)]
        error_threshold: Option<f64>,
    },
    /// Time one call through the fallback and one through the dispatcher.
    ApplyDemo(demo::DemoArgs),
    /// Run the feedback loop over a candidate provider and keep the best solution.
    Loop(LoopArgs),
    #[command(hide = true)]
    NativePlugin,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
    #[arg(long, default_value = "persistent")]
    pub mode: ExecutorMode,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub runs: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-execution timeout in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub timeout: f64,
    /// Absolute tolerance override; needs --rtol as well.
    #[arg(long, requires = "rtol")]
    pub atol: Option<f64>,
    #[arg(long, requires = "atol")]
    pub rtol: Option<f64>,
    /// Matched-ratio threshold for low-precision outputs.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Solution timed as the speedup baseline of its definition.
    #[arg(long)]
    pub baseline: Vec<String>,
}

impl EngineArgs {
    pub fn timing(&self) -> TimingConfig {
        TimingConfig {
            warmup: self.warmup,
            runs: self.runs as usize,
            timeout: Duration::from_secs_f64(self.timeout),
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub filter_definition: Vec<String>,
    #[arg(long)]
    pub filter_solution: Vec<String>,
    /// Also write the run's records as one JSON array here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LoopArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub definition: String,
    /// A directory of solution documents, or `cmd:PROGRAM [ARGS...]`.
    #[arg(long)]
    pub provider: String,
    #[arg(long, default_value_t = 5)]
    pub iterations: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if matches!(cli.command, Command::NativePlugin) {
        return ExitCode::from(tracebench_core::plugin::native::main().clamp(0, 255) as u8);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let r = match cli.command {
        Command::Validate { dataset } => commands::validate(&dataset),
        Command::Bench(a) => commands::bench(&a),
        Command::Report { dataset, out } => commands::report(&dataset, &out),
        Command::BuildIndex { dataset, out, error_threshold } => commands::build_index(&dataset, &out, error_threshold),
        Command::ApplyDemo(a) => demo::run(&a),
        Command::Loop(a) => commands::feedback_loop(&a),
        Command::NativePlugin => unreachable!(),
    };
    match r {
        Ok(code) => code.into(),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Process outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    /// Violations or failing evaluations were found.
    Failures,
}

impl From<Outcome> for ExitCode {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Clean => ExitCode::SUCCESS,
            Outcome::Failures => ExitCode::from(1),
        }
    }
}
