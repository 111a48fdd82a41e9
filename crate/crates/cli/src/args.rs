use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "slp", version, about = "Skim, locate, then peruse: temporal localization on synthetic corpora")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic training corpus and a held-out split.
    GenData(GenDataArgs),
    /// Run the three training stages (or a subset), writing a checkpoint per stage.
    Train(TrainArgs),
    /// Compute R@n,IoU=m on a corpus.
    Eval(EvalArgs),
    /// Localize one example and print the perusing trace.
    Infer(InferArgs),
    /// Compare analytic gradients of the full loss with finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat TOML file supplying any flag; command-line values win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct CorpusFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub words: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_in: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct ModelFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph_layers: Option<usize>,
}

/// Knobs that change inference only.
#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct InferFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// left-then-right, right-then-left or left-while-right
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<String>,
    /// left-first or right-first
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub side_order: Option<String>,
    /// gated or max-pool
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub update_strategy: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check_finite: Option<bool>,
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct TrainFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs_stage1: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs_stage2: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs_stage3: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau_window: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau_min_rel: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triplets_per_example: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_class: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_match: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_conf: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub corpus: CorpusFlags,
    /// Training examples, written to train.bin.
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    /// Held-out examples following the training indices, written to heldout.bin (0 skips it).
    #[arg(long, default_value_t = 500)]
    pub holdout: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub infer: InferFlags,
    /// Training corpus (default: <out-dir>/train.bin).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Stages to run, e.g. "1,2,3" or "1-3" or "2".
    #[arg(long, default_value = "1-3")]
    pub stages: String,
    /// Continue from a checkpoint at its recorded stage and epoch.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Corpus evaluated after the last stage (default: <out-dir>/heldout.bin when present).
    #[arg(long)]
    pub eval_corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub infer: InferFlags,
    /// Model checkpoint (default: <out-dir>/latest.ckpt); unused by the oracle predictor.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Corpus to score (default: <out-dir>/heldout.bin).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma-separated n values for R@n.
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    pub n: Vec<usize>,
    /// Comma-separated IoU thresholds.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.7")]
    pub m: Vec<f64>,
    /// slp (skim then peruse), sl-only (anchor ± mean half-length) or oracle (ground truth).
    #[arg(long, default_value = "slp")]
    pub predictor: Predictor,
    /// Half-width for the sl-only predictor (default: mean ground-truth half-length of the corpus).
    #[arg(long)]
    pub half_width: Option<usize>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Predictor {
    Slp,
    SlOnly,
    Oracle,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub infer: InferFlags,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Example index within the corpus.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Write per-frame scores with ground-truth shading as SVG.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Write the full prediction as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 6)]
    pub frames: usize,
    #[arg(long, default_value_t = 3)]
    pub words: usize,
    #[arg(long, default_value_t = 8)]
    pub d_model: usize,
    /// Scale the analytic gradient of this tensor before comparing (sensitivity check).
    #[arg(long)]
    pub corrupt: Option<String>,
    #[arg(long, default_value_t = 1.01)]
    pub corrupt_factor: f64,
}
