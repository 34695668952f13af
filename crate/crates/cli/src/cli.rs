use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sdmtl::loss::WeightScheme;

#[derive(Debug, Parser)]
#[command(
    name = "sdmtl",
    version,
    about = "Skeleton motion prediction: synthesize, train, evaluate, predict"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset of CSV sequences plus a manifest.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint and loss history.
    Train(TrainArgs),
    /// Report MPJPE per horizon against zero- and constant-velocity baselines.
    Eval(EvalArgs),
    /// Predict the frames following the end of one CSV sequence.
    Predict(PredictArgs),
    /// Verify analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub sequences: usize,
    #[arg(long, default_value_t = 120)]
    pub frames: usize,
    #[arg(long, default_value_t = 8)]
    pub joints: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Exp,
    Linear,
    Uniform,
}

impl From<LossArg> for WeightScheme {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Exp => WeightScheme::Exp,
            LossArg::Linear => WeightScheme::Linear,
            LossArg::Uniform => WeightScheme::Uniform,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AblateArg {
    Ted,
    Amg,
    Rc,
    Ei,
}

impl AblateArg {
    pub fn as_str(self) -> &'static str {
        match self {
            AblateArg::Ted => "ted",
            AblateArg::Amg => "amg",
            AblateArg::Rc => "rc",
            AblateArg::Ei => "ei",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// key=value configuration file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Repeatable; replaces any ablations from the config file.
    #[arg(long, value_enum)]
    pub ablate: Vec<AblateArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Any configuration key, as key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Loss-history CSV path (default: <out>.loss.csv).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Split {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated horizons; defaults to every standard horizon the model covers.
    #[arg(long = "horizons-ms", value_delimiter = ',')]
    pub horizons_ms: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Sequence split to evaluate (80/10/10 by file order).
    #[arg(long, value_enum, default_value_t = Split::All)]
    pub split: Split,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 0)]
    pub root: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub root: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Check every parameter coordinate instead of a seeded sample.
    #[arg(long)]
    pub full: bool,
}
