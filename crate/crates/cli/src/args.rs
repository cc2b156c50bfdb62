use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mtsci", version, about = "Diffusion imputation for multivariate time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Freeze evaluation masks for every split.
    Simulate(SimulateArgs),
    /// Train a model and write a checkpoint plus a metrics log.
    Train(TrainArgs),
    /// Impute a split with a checkpoint or a baseline.
    Impute(ImputeArgs),
    /// Score an imputation file against the frozen held-out cells.
    Evaluate(EvaluateArgs),
}

/// Options shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.lambda=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for inference.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Force single-threaded numeric paths.
    #[arg(long)]
    pub deterministic: bool,
    /// Overwrite frozen outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PatternArg {
    Point,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for mtsci::dataset::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Self::Train,
            SplitArg::Val => Self::Val,
            SplitArg::Test => Self::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Mtsci,
    Mean,
    Linear,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Mtsci => "mtsci",
            Method::Mean => "mean",
            Method::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Missing pattern (overrides `missing.pattern`).
    #[arg(long, value_enum)]
    pub pattern: Option<PatternArg>,
    /// Point-missing ratio (overrides `missing.ratio`).
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// full, wo_intra, wo_inter or wo_cons.
    #[arg(long)]
    pub ablation: Option<String>,
    /// Epochs to run (overrides `train.epochs`).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint for `--method mtsci` (default `<out>/checkpoint.json`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Mtsci)]
    pub method: Method,
    /// Samples per window (overrides `infer.samples`).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Output CSV (default `<out>/imputation.<method>.csv`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Imputation CSV written by `impute`.
    #[arg(long)]
    pub imputation: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Method name in the report (default: the file stem).
    #[arg(long)]
    pub label: Option<String>,
    /// Report path prefix; `.json` and `.csv` are appended
    /// (default `<out>/report.<label>`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}
