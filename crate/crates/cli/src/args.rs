use std::path::PathBuf;

use ccr_core::active::{ScoreKind, Strategy};
use ccr_core::LearnerKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "ccr", version, about = "Cluster-classify-regress surrogates for discontinuous functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to labeled data.
    Fit(FitArgs),
    /// Predict outputs for input rows.
    Predict(PredictArgs),
    /// Score a model on labeled data.
    Evaluate(EvaluateArgs),
    /// Grow a training set by active learning.
    Active(ActiveArgs),
    /// Rerun a reference problem.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerArg {
    Mlp,
    Forest,
}

impl From<LearnerArg> for LearnerKind {
    fn from(v: LearnerArg) -> Self {
        match v {
            LearnerArg::Mlp => LearnerKind::Mlp,
            LearnerArg::Forest => LearnerKind::Forest,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Reservoir,
    Hull,
    Boundary,
    Perturb,
}

impl From<StrategyArg> for Strategy {
    fn from(v: StrategyArg) -> Self {
        match v {
            StrategyArg::Reservoir => Strategy::Reservoir,
            StrategyArg::Hull => Strategy::Hull,
            StrategyArg::Boundary => Strategy::Boundary,
            StrategyArg::Perturb => Strategy::Perturb,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreArg {
    Uncertainty,
    Entropy,
    Margin,
}

impl From<ScoreArg> for ScoreKind {
    fn from(v: ScoreArg) -> Self {
        match v {
            ScoreArg::Uncertainty => ScoreKind::Uncertainty,
            ScoreArg::Entropy => ScoreKind::Entropy,
            ScoreArg::Margin => ScoreKind::Margin,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainArg {
    Hull,
    Box,
}

#[derive(Debug, Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Json,
}

/// Pipeline settings shared by the commands that fit models.
#[derive(Debug, Clone, Args)]
pub struct ModelFlags {
    /// Cluster count (elbow selection when omitted).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub clusters: Option<u64>,
    #[arg(long, value_enum)]
    pub classifier: Option<LearnerArg>,
    #[arg(long, value_enum)]
    pub regressor: Option<LearnerArg>,
    /// Output amplification for clustering (default 10 d).
    #[arg(long)]
    pub amplification: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file of defaults; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Labeled data, last column is the output.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Output directory, or a `.json` path for the model file.
    #[arg(long, default_value = "ccr-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input rows; a trailing output column is ignored.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "ccr-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled data, last column is the output.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, default_value = "ccr-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ActiveArgs {
    /// Reference problem (1-5) used as the labeling oracle and data source.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=5))]
    pub example: Option<u32>,
    /// Initial labeled data (otherwise sampled from the example).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Labeled test data (otherwise sampled from the example).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Labeled candidate pool; its outputs answer oracle queries.
    #[arg(long)]
    pub reservoir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    pub score: Option<ScoreArg>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub refit_every: Option<u64>,
    #[arg(long)]
    pub initial_size: Option<usize>,
    #[arg(long)]
    pub reservoir_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long, value_enum)]
    pub domain: Option<DomainArg>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, default_value = "ccr-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("what").required(true).args(["example", "table2"])))]
pub struct BenchmarkArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=5))]
    pub example: Option<u32>,
    /// Active (reservoir, uncertainty) versus passive comparison on example 2.
    #[arg(long)]
    pub table2: bool,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, default_value = "ccr-out")]
    pub out: PathBuf,
}
