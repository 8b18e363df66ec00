//! `tts`: train, predict, evaluate, bench and synth.

mod commands;
mod failure;
mod inputs;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use crate::failure::{Classify, Failure, Kind, Outcome};
use crate::output::Outputs;
use crate::settings::Settings;

/// Environment variable with the worker thread count.
pub const WORKERS_ENV: &str = "TTS_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "tts", version, about = "Change-based regression test selection")]
struct Cli {
    /// TOML settings; each subcommand reads its own table, flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print per-stage wall times to stderr.
    #[arg(long, global = true)]
    timings: bool,
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit and tune a model on the latest history window.
    Train(TrainArgs),
    /// Rank and select tests for one change.
    Predict(PredictArgs),
    /// Replay cycles after the training window and report metrics.
    Evaluate(EvaluateArgs),
    /// Chronological benchmark on a public CI dataset.
    Bench(BenchArgs),
    /// Generate a synthetic history.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Commit log (JSON lines).
    #[arg(long)]
    pub commits: Option<PathBuf>,
    /// Test results log (JSON lines).
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Training window in days [default: 56].
    #[arg(long)]
    pub train_days: Option<u32>,
    /// Validation window in days [default: 14].
    #[arg(long)]
    pub val_days: Option<u32>,
    /// Model artifact path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Feature groups, comma separated [default: all].
    #[arg(long)]
    pub groups: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model artifact from `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// The change, as one or more commit-log lines.
    #[arg(long)]
    pub change: Option<PathBuf>,
    /// Candidate tests (JSON lines with `test` and optional `path`, `module`).
    #[arg(long)]
    pub tests: Option<PathBuf>,
    /// Selection budget [default: 50].
    #[arg(long)]
    pub k: Option<usize>,
    /// Selection report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Commit history for file and cross features.
    #[arg(long)]
    pub commits: Option<PathBuf>,
    /// Test history for test features and stability flags.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Unified diff of the change, for comment-only detection.
    #[arg(long)]
    pub diff: Option<PathBuf>,
    /// Repository paths, one per line, for module detection.
    #[arg(long)]
    pub repo_files: Option<PathBuf>,
    /// Documentation extension (repeatable) [default: md].
    #[arg(long)]
    pub doc_ext: Vec<String>,
    /// Build file marking a module root (repeatable).
    #[arg(long)]
    pub module_marker: Vec<String>,
    /// Module dependency hops kept by the modular filter [default: 1].
    #[arg(long)]
    pub hops: Option<u32>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub commits: Option<PathBuf>,
    /// Cutoff for k-metrics and, without `--budget`, for NAPFD [default: 50].
    #[arg(long)]
    pub k: Option<usize>,
    /// Metric report path (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fraction of each cycle counted as run for NAPFD.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Evaluate cycles after this epoch second [default: end of training].
    #[arg(long)]
    pub after: Option<i64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Strategy comparison table (CSV).
    #[arg(long)]
    pub strategies_out: Option<PathBuf>,
    /// Mean confidence curve (CSV).
    #[arg(long)]
    pub curve_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// CSV dataset.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// CSV layout [default: iofrol_gsdtsr].
    #[arg(long)]
    pub schema: Option<String>,
    /// Fraction of each cycle that is run [default: 0.5].
    #[arg(long)]
    pub budget: Option<f64>,
    /// Result table (CSV).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cutoff for k-metrics [default: 50].
    #[arg(long)]
    pub k: Option<usize>,
    /// Verdict code meaning failed (repeatable) [default: 1].
    #[arg(long)]
    pub failed_code: Vec<String>,
    /// Full metric report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Wall time per stage.
#[derive(Debug, Default)]
pub struct Timings {
    stages: Vec<(&'static str, Duration)>,
}

impl Timings {
    pub fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push((stage, start.elapsed()));
        out
    }

    fn report(&self) {
        let total: Duration = self.stages.iter().map(|(_, d)| *d).sum();
        for (stage, d) in &self.stages {
            eprintln!("timing {stage:<10} {:>9.3}s", d.as_secs_f64());
        }
        eprintln!("timing {:<10} {:>9.3}s", "total", total.as_secs_f64());
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

fn init_workers() -> Outcome<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::usage(format!("{WORKERS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(anyhow::Error::from)
        .usage_err()
}

fn run(cli: Cli, outputs: &mut Outputs, timings: &mut Timings) -> Outcome<()> {
    init_workers()?;
    let settings = match &cli.config {
        Some(path) => Settings::load(path).usage_err()?,
        None => Settings::default(),
    };
    match cli.command {
        Command::Train(a) => commands::train(a, settings.train, outputs, timings),
        Command::Predict(a) => commands::predict(a, settings.predict, outputs, timings),
        Command::Evaluate(a) => commands::evaluate(a, settings.evaluate, outputs, timings),
        Command::Bench(a) => commands::bench(a, settings.bench, outputs, timings),
        Command::Synth(a) => commands::synth(a, settings.synth, outputs, timings),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Kind::Usage.exit_code() } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.verbose);
    let show_timings = cli.timings;
    let mut outputs = Outputs::default();
    let mut timings = Timings::default();
    let result = run(cli, &mut outputs, &mut timings);
    if show_timings {
        timings.report();
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            outputs.rollback();
            eprintln!("error: {f}");
            f.kind.exit_code()
        }
    }
}
