//! `vqarank`: synthetic data, head and ranker training, evaluation and
//! informative-question selection.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "vqarank", version, about = "VQA-grounded image-caption ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand accepts.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Master seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML config; flags override it, it overrides defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory (default: $VQARANK_DATA_DIR, then ./data).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Where artifacts go (default: the data directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n_facts: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub captions_per_image: Option<usize>,
    #[arg(long)]
    pub omission_rate: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainHeadArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub multimodal_dim: Option<usize>,
    /// Keep probability of the hidden dropout.
    #[arg(long)]
    pub keep_prob: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: Common,
    /// Image head checkpoint (default: <out>/vqa_image.ckpt).
    #[arg(long)]
    pub image_head: Option<PathBuf>,
    /// Caption head checkpoint (default: <out>/vqa_caption.ckpt).
    #[arg(long)]
    pub caption_head: Option<PathBuf>,
    #[arg(long)]
    pub per_image: Option<usize>,
    #[arg(long)]
    pub num_images: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankerMode {
    Agnostic,
    Score,
    Rep,
}

#[derive(Args, Debug)]
pub struct TrainRankerArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub mode: RankerMode,
    /// full, caption_only, image_only or agnostic_deeper (rep mode).
    #[arg(long, default_value = "full")]
    pub fusion_mode: vqarank::ranking::FusionMode,
    /// Trained agnostic ranker for score/rep modes
    /// (default: <out>/ranker_agnostic.ckpt).
    #[arg(long)]
    pub agnostic: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub keep_prob: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FitAlphaBetaArgs {
    #[command(flatten)]
    pub common: Common,
    /// Score-fusion checkpoint, updated in place
    /// (default: <out>/ranker_score_fusion.ckpt).
    #[arg(long)]
    pub ranker: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ranker checkpoint, or `oracle` for ground-truth scores.
    #[arg(long)]
    pub ranker: String,
    #[arg(long, default_value = "test")]
    pub split: vqarank::data::manifest::Split,
}

#[derive(Args, Debug)]
pub struct SelectQaArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ranker: PathBuf,
    /// Image head used for fact validity (default: <out>/vqa_image.ckpt).
    #[arg(long)]
    pub image_head: Option<PathBuf>,
    /// Query image id.
    #[arg(long)]
    pub image: String,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// from_joint or point_estimate.
    #[arg(long)]
    pub marginals: Option<vqarank::qa_select::MarginalKind>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// One architecture, or all of them.
    #[arg(long, default_value = "all")]
    pub arch: String,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenSynth(GenSynthArgs),
    /// Train the image VQA head.
    TrainVqa(TrainHeadArgs),
    /// Train the caption VQA head.
    TrainVqacap(TrainHeadArgs),
    /// Build the QA bank and write u vectors for every image and caption.
    ExtractGrounding(ExtractArgs),
    /// Train a ranker.
    TrainRanker(TrainRankerArgs),
    /// Fit score-fusion weights on the validation split.
    FitAlphabeta(FitAlphaBetaArgs),
    /// Recall@K and median rank of a ranker.
    Evaluate(EvaluateArgs),
    /// Rank bank questions by mutual information with the caption choice.
    SelectQa(SelectQaArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::GenSynth(a) => commands::gen_synth(a),
        Command::TrainVqa(a) => commands::train_head(a, vqarank::heads::HeadKind::Image),
        Command::TrainVqacap(a) => commands::train_head(a, vqarank::heads::HeadKind::Caption),
        Command::ExtractGrounding(a) => commands::extract_grounding(a),
        Command::TrainRanker(a) => commands::train_ranker(a),
        Command::FitAlphabeta(a) => commands::fit_alphabeta(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::SelectQa(a) => commands::select_qa(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
