//! Command-line surface. Every flag that mirrors a config field is optional;
//! set flags win over the config file, which wins over built-in defaults.

use clap::{Args, Parser, Subcommand, ValueEnum};
use ssb_core::synthdata::Split;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "ssb",
    version,
    about = "Bridge-based ambiguous segmentation: data, training, sampling, scoring"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset of images with per-expert masks.
    GenData(GenDataArgs),
    /// Train the noise predictor on a dataset's train split.
    Train(TrainArgs),
    /// Draw segmentation masks for a dataset split from a checkpoint.
    Sample(SampleArgs),
    /// Score drawn masks against the expert masks, one CSV row per record.
    Evaluate(EvaluateArgs),
    /// Run the built-in self checks and report a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Dataset directory to create or overwrite.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub experts: Option<u32>,
    #[arg(long)]
    pub ambiguity: Option<f64>,
    /// Fraction of records in the train split.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory (from gen-data).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint, loss trace, and config echo.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dice penalty weight.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub label_drop_prob: Option<f64>,
    /// Feed the raw noise prediction to the Dice term (ablation).
    #[arg(long)]
    pub dice_on_eps: Option<bool>,
    /// Channel widths for the two resolution levels, e.g. 8,16.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    /// Normalization groups; must divide both channel widths.
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub total_variance: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Checkpoint file (from train).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory providing the conditioning images.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the drawn masks and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub num_samples: Option<usize>,
    /// Guidance weight; 0 skips the unconditional pass entirely.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Reverse transitions per sample.
    #[arg(long)]
    pub nfe: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop the per-transition noise (mean-only reverse chain).
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Dataset directory with the expert masks.
    #[arg(long)]
    pub data: PathBuf,
    /// Sample output directory (from sample).
    #[arg(long)]
    pub pred: PathBuf,
    /// CSV file to write; one row per record plus an AGGREGATE row.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Corrupt the reverse chain's schedule to demonstrate the checks fire.
    #[arg(long)]
    pub inject_fault: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(v: SplitArg) -> Split {
        match v {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}
