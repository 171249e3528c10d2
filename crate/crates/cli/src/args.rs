use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use longtrait::evaluation::SplitMode;

#[derive(Debug, Parser)]
#[command(
    name = "longtrait",
    version,
    about = "Trait regression over windowed embeddings of long transcripts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted signal windows
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Print the window spans for a token count
    Plan {
        #[command(flatten)]
        common: Common,
        /// Transcript length in tokens
        #[arg(long)]
        tokens: Option<usize>,
        #[command(flatten)]
        window: WindowArgs,
    },
    /// Fit one model per selected trait on the whole dataset
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        folds: FoldArgs,
    },
    /// Cross-validate one or more recipes
    Cv {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        folds: FoldArgs,
    },
    /// Export attention, removal impact and cross-trait overlap for trained models
    Explain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Directory written by `train`
        #[arg(long)]
        models: Option<PathBuf>,
        /// Top-k windows per transcript
        #[arg(long)]
        k: Option<usize>,
    },
    /// Check a dataset manifest and its embedding files
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        window: WindowArgs,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags take precedence over it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: $LONGTRAIT_OUT, then ./out)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// O, C, E, A, N, a comma-separated list, or all
    #[arg(long = "trait")]
    pub traits: Option<String>,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub cap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// rnn, ffn, ridge, ridge-window or median; comma-separated for several
    #[arg(long, value_delimiter = ',')]
    pub recipe: Vec<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Early-stopping patience in epochs; 0 disables it
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub dropout: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Split {
    Kfold,
    RepeatedHoldout,
}

impl From<Split> for SplitMode {
    fn from(s: Split) -> Self {
        match s {
            Split::Kfold => SplitMode::KFold,
            Split::RepeatedHoldout => SplitMode::RepeatedHoldout,
        }
    }
}

#[derive(Debug, Args)]
pub struct FoldArgs {
    /// Number of folds
    #[arg(long)]
    pub folds: Option<usize>,
    /// Share of each training pool kept for early stopping
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Order-dependent target instead of a linear one
    #[arg(long)]
    pub sequential: bool,
    /// Number of transcripts
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub snr: Option<f64>,
}
