use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "arpro", version, about = "Property-guided counterfactual repair for anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset directory.
    GenData(Common),
    /// Fit the anomaly detector and save its checkpoint.
    TrainDetector(Common),
    /// Train the denoiser on the normal split and save its checkpoint.
    TrainDiffusion(Common),
    /// Repair the anomalous test instances with one arm.
    Repair(RepairCmd),
    /// Paired baseline/guided run with aggregate report.
    Evaluate(EvalCmd),
    /// Sweep one repair parameter over a list of values.
    Ablate(AblateCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Ts,
    Image,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON experiment configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if needed).
    #[arg(long)]
    pub out: PathBuf,
    /// Benchmark preset the config is layered on.
    #[arg(long, value_enum, default_value = "ts")]
    pub kind: Kind,
    /// Dataset directory with train.csv, test.csv and test_labels.csv.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelPaths {
    /// Detector checkpoint; trained in-run when absent.
    #[arg(long)]
    pub detector: Option<PathBuf>,
    /// Denoiser checkpoint; trained in-run when absent.
    #[arg(long)]
    pub denoiser: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RepairFlags {
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub lambda4: Option<f64>,
    #[arg(long)]
    pub eta_start: Option<f64>,
    #[arg(long)]
    pub eta_end: Option<f64>,
    /// paper-literal or level-matched.
    #[arg(long)]
    pub infill_mode: Option<String>,
    /// standard or paper-literal.
    #[arg(long)]
    pub std_mode: Option<String>,
    /// Record wall-clock seconds (outputs are then not byte-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RepairCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub models: ModelPaths,
    #[command(flatten)]
    pub flags: RepairFlags,
    /// Guided repair (default).
    #[arg(long, conflicts_with = "baseline")]
    pub guided: bool,
    /// Unguided repair with masked infilling only.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub models: ModelPaths,
    #[command(flatten)]
    pub flags: RepairFlags,
}

#[derive(Debug, Clone, Args)]
pub struct AblateCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub models: ModelPaths,
    #[command(flatten)]
    pub flags: RepairFlags,
    /// lambda1..lambda4 or eta_scale; a comma list sweeps each in turn.
    #[arg(long, default_value = "lambda1,lambda2,lambda3,lambda4")]
    pub param: String,
    #[arg(long, default_value = "0.1,1,10")]
    pub values: String,
}
