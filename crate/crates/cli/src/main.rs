//! `whalepost` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use whalepost::hypersearch::{BackwardStage2, Strategy};

#[derive(Debug, Parser)]
#[command(name = "whalepost", version, about = "Post-process, evaluate and tune frame-wise whale call detectors")]
struct Cli {
    /// Worker threads; 0 uses all cores. Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn probability traces into events.
    Postprocess(PostprocessArgs),
    /// Score an events CSV against annotations.
    Evaluate(EvaluateArgs),
    /// Fold-averaged precision-recall curve per class, as TSV.
    PrCurve(PrCurveArgs),
    /// Cross-validated hyperparameter search.
    Search(SearchArgs),
    /// Write a synthetic dataset (traces plus annotations).
    Synth(SynthArgs),
    /// Seeded forward pass of the gating network with invariant checks.
    BpnDemo(BpnDemoArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory holding `<fold>/<recording>.csv` traces.
    #[arg(long)]
    traces: PathBuf,
    /// Annotation CSV.
    #[arg(long)]
    annotations: PathBuf,
    /// Comma-separated fold names.
    #[arg(long, value_delimiter = ',', default_values_t = default_folds())]
    folds: Vec<String>,
    /// JSON map from raw call type to class.
    #[arg(long)]
    grouping: Option<PathBuf>,
    #[arg(long, default_value_t = whalepost::evalkit::DEFAULT_MATCH_THRESHOLD)]
    match_threshold: f64,
}

fn default_folds() -> Vec<String> {
    whalepost::hypersearch::FoldSpec::default().folds
}

#[derive(Debug, Args)]
struct PostprocessArgs {
    /// A trace file, or a directory searched recursively for `*.csv`.
    #[arg(long)]
    traces: PathBuf,
    /// Per-class JSON configuration; defaults to the unoptimised baseline.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output events CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Events CSV with `recording_id,label,t_start,t_end`.
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    /// Trace directory, used to place recordings without annotations.
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = default_folds())]
    folds: Vec<String>,
    #[arg(long)]
    grouping: Option<PathBuf>,
    #[arg(long, default_value_t = whalepost::evalkit::DEFAULT_MATCH_THRESHOLD)]
    match_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PrCurveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Forward,
    Backward,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Forward => Strategy::Forward,
            StrategyArg::Backward => Strategy::Backward,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Stage2Arg {
    /// Re-search kernels and both thresholds.
    All,
    /// Re-search kernels only, keeping the equal-PR threshold.
    Kernels,
}

impl From<Stage2Arg> for BackwardStage2 {
    fn from(s: Stage2Arg) -> Self {
        match s {
            Stage2Arg::All => BackwardStage2::AllFrameParams,
            Stage2Arg::Kernels => BackwardStage2::KernelsOnly,
        }
    }
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    /// JSON search-space override.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Frame parameters re-searched by backward-search Stage 2.
    #[arg(long, value_enum, default_value = "all")]
    backward_stage2: Stage2Arg,
    /// Recorded in the report.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// Well separated probabilities; thresholding recovers the truth.
    Clean,
    /// Fragmented, jittered probabilities.
    Noisy,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON recording spec; overrides `--preset`.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "noisy")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = default_folds())]
    folds: Vec<String>,
    #[arg(long, default_value_t = 2)]
    recordings: usize,
    /// Output directory; receives `traces/` and `annotations.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BpnDemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    heads: usize,
    #[arg(long, default_value_t = 300)]
    frames: usize,
    #[arg(long, default_value_t = 5)]
    freq: usize,
    /// Single ROI per head.
    #[arg(long)]
    single: bool,
    /// Weight manifest to load instead of seeded weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Also write the weights used as a manifest.
    #[arg(long)]
    save_weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl From<whalepost::Error> for Failure {
    fn from(e: whalepost::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
