//! `taco`: synthesize corpora, train task encoders and analyze their embeddings.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use taco_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "taco", version, about = "Task-contrastive embeddings for visual tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic segmentation corpus from a corpus spec.
    SynthCorpus(SynthArgs),
    /// Train an encoder on the train split of the seen datasets.
    Train(TrainArgs),
    /// Write the embeddings of one split or of all splits.
    Embed(EmbedArgs),
    /// kNN macro-F1 over seen/unseen scenarios.
    Eval(EvalArgs),
    /// Distance of progressively altered tasks to a reference task mean.
    Sweep(SweepArgs),
    /// Cosine similarity between mean task embeddings.
    Simmatrix(SimmatrixArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus spec (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config (JSON); omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed; also seeds the data split.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `taco` or `simclr_baseline`.
    #[arg(long)]
    pub loss_mode: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Training config the checkpoint must match.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for instance synthesis and probe selection.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Task types to embed (default: all).
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// `train`, `val`, `test` or `all`.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 5])]
    pub k: Vec<usize>,
    /// `tasks:datasets` filter pair, e.g. `seen:unseen`; repeatable (default: all nine).
    #[arg(long)]
    pub scenario: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = ["visual_task".to_string(), "task".into(), "dataset".into()])]
    pub granularity: Vec<String>,
    /// Precomputed embeddings evaluated alongside; cells are named after the file stem.
    #[arg(long)]
    pub baseline_embeddings: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// `brightness`, `rotation` or `noisy_segmentation`.
    pub kind: String,
    #[arg(long, default_value_t = 50)]
    pub probes: usize,
    /// Reference tasks (default depends on the sweep).
    #[arg(long, value_delimiter = ',')]
    pub reference: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimmatrixArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "task")]
    pub granularity: String,
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("TACO_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("TACO_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::SynthCorpus(a) => commands::synth_corpus(&a),
        Command::Train(a) => commands::train(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Simmatrix(a) => commands::simmatrix(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
