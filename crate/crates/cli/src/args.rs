use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lus_core::dataset::Split;

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "lus", version, about = "Lung ultrasound video screening: prepare, train, evaluate, predict, plot")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Dataset manifest (CSV with id, filename, class, probe columns).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Directory the manifest filenames are relative to.
    #[arg(long, global = true)]
    pub video_root: Option<PathBuf>,
    /// Output directory for clips, features, checkpoints and reports.
    #[arg(long, global = true)]
    pub work_dir: Option<PathBuf>,
    /// TOML config file; overrides the work dir's run.toml.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for split sampling, head initialisation and batch order.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Probability at or above which a video is called positive.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Generate and use a small procedural dataset with a reduced backbone.
    #[arg(long, global = true)]
    pub synthetic: bool,
}

impl CommonArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            manifest: self.manifest.clone(),
            video_root: self.video_root.clone(),
            work_dir: self.work_dir.clone(),
            config: self.config.clone(),
            seed: self.seed,
            max_epochs: self.max_epochs,
            lr: self.lr,
            threshold: self.threshold,
            synthetic: self.synthetic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalSplit {
    Val,
    Test,
}

impl From<EvalSplit> for Split {
    fn from(s: EvalSplit) -> Split {
        match s {
            EvalSplit::Val => Split::Val,
            EvalSplit::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter the manifest, assign splits and preprocess every eligible video.
    Prepare,
    /// Train the classifier on the prepared train/val splits.
    Train,
    /// Evaluate a checkpoint on the val or test split.
    Evaluate {
        #[arg(long, value_enum, default_value = "test")]
        split: EvalSplit,
        /// Defaults to <work_dir>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Classify video files, or every video in a directory.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// JSON-lines record file; defaults to <work_dir>/predictions.jsonl.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Print JSON records instead of verdict lines.
        #[arg(long)]
        json: bool,
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Render accuracy, loss and learning-rate curves from a history file.
    Plot {
        /// Defaults to <work_dir>/history.csv.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Defaults to <work_dir>/plots.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}
