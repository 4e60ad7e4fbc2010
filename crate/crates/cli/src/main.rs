//! `disq`: generate data, train codebooks, tokenize, train, evaluate and sweep.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use disq::dataio::Split;
use disq::{Error, ErrorCategory};

#[derive(Debug, Parser)]
#[command(
    name = "disq",
    version,
    about = "Discrete-token emotion classification pipeline"
)]
pub struct Cli {
    /// Write outputs to exactly this directory instead of
    /// `$DISQ_RUN_DIR/<subcommand>-<config digest>` (root defaults to `runs`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Maximum number of sweep cells trained in parallel.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    pub workers: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (manifest plus feature files).
    Gen(GenArgs),
    /// Train per-layer (and optionally openSMILE category) codebooks on the train split.
    Codebooks(CodebooksArgs),
    /// Write token indices and centroid reconstructions using trained codebooks.
    Tokenize(TokenizeArgs),
    /// Train the fusion model and classifier; writes a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Run a grid of layer sets, codebook sizes, augmentations and seeds.
    Sweep(SweepArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// JSON synthetic-dataset spec; the built-in reference spec when omitted.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Override the spec's random seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Override the number of utterances per class.
    #[arg(long, value_name = "N")]
    pub n_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CodebooksArgs {
    /// Dataset manifest file or the directory containing `manifest.json`.
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// Comma-separated layer indices (takes precedence over --layer-set).
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub layers: Option<Vec<usize>>,
    /// Named layer set (all, all_but_last, last_only, sparse, last8, ten) or custom:i,j,...
    #[arg(long, value_name = "NAME")]
    pub layer_set: Option<String>,
    /// Codebook size.
    #[arg(long, default_value_t = 256, value_name = "K")]
    pub k: usize,
    /// Seed for k-means++ initialization.
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub seed: u64,
    /// Maximum Lloyd iterations.
    #[arg(long, default_value_t = 100, value_name = "N")]
    pub max_iters: usize,
    /// Relative distortion improvement below which iterations stop.
    #[arg(long, default_value_t = 1e-6, value_name = "X")]
    pub rel_tol: f64,
    /// Also train the seven openSMILE category codebooks.
    #[arg(long)]
    pub opensmile: bool,
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    /// Dataset manifest file or the directory containing `manifest.json`.
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// Directory written by `disq codebooks`.
    #[arg(long, value_name = "DIR")]
    pub codebooks: PathBuf,
    /// Only tokenize this split (train, dev or test).
    #[arg(long, value_name = "SPLIT")]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest file or the directory containing `manifest.json`.
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// JSON training config; flags below override its fields.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory written by `disq codebooks` to use instead of training codebooks.
    #[arg(long, value_name = "DIR")]
    pub codebooks: Option<PathBuf>,
    /// Layer set name or custom:i,j,...
    #[arg(long, value_name = "NAME")]
    pub layer_set: Option<String>,
    /// Codebook size.
    #[arg(long, value_name = "K")]
    pub k: Option<usize>,
    /// Feed raw features instead of codebook reconstructions.
    #[arg(long)]
    pub continuous: bool,
    /// Paralinguistic augmentation: none, all or a category name.
    #[arg(long, value_name = "NAME")]
    pub aug: Option<String>,
    /// Seed of the codebooks.
    #[arg(long, value_name = "N")]
    pub codebook_seed: Option<u64>,
    /// Seed of parameter initialization and batch shuffling.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Number of epochs.
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Optimizer step size.
    #[arg(long, value_name = "X")]
    pub learning_rate: Option<f64>,
    /// Utterances per batch.
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Hidden width of the classifier.
    #[arg(long, value_name = "N")]
    pub hidden: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory written by `disq train`.
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    /// Dataset manifest file or the directory containing `manifest.json`.
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// Split to evaluate (train, dev or test).
    #[arg(long, default_value = "test", value_name = "SPLIT")]
    pub split: Split,
    /// Directory written by `disq codebooks`, if training used one.
    #[arg(long, value_name = "DIR")]
    pub codebooks: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dataset manifest file or the directory containing `manifest.json`.
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// JSON grid file; the full default grid when omitted.
    #[arg(long, value_name = "FILE")]
    pub grid: Option<PathBuf>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated codebook sizes.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub ks: Option<Vec<usize>>,
    /// Comma-separated layer set names.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub layer_sets: Option<Vec<String>>,
    /// Comma-separated augmentations (none, all or category names).
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub augmentations: Option<Vec<String>>,
    /// Number of epochs per cell.
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Split the result rows are computed on.
    #[arg(long, value_name = "SPLIT")]
    pub eval_split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seeds of the random problems to check (comma-separated or repeated).
    #[arg(long, value_delimiter = ',', default_value = "0", value_name = "N")]
    pub seed: Vec<u64>,
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numeric => 4,
    }
}

fn report(category: ErrorCategory, message: &str) -> ExitCode {
    let line = serde_json::json!({ "category": category.as_str(), "message": message });
    eprintln!("{line}");
    ExitCode::from(exit_code(category))
}

fn dispatch(cli: &Cli) -> Result<PathBuf, Error> {
    let out: Option<&Path> = cli.out.as_deref();
    if cli.workers == 0 {
        return Err(Error::config("workers", "must be at least 1"));
    }
    match &cli.command {
        Command::Gen(a) => commands::gen(a, out),
        Command::Codebooks(a) => commands::codebooks(a, out),
        Command::Tokenize(a) => commands::tokenize(a, out),
        Command::Train(a) => commands::train(a, out),
        Command::Eval(a) => commands::eval(a, out),
        Command::Sweep(a) => commands::sweep(a, cli.workers, out),
        Command::Gradcheck(a) => commands::gradcheck(a, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let msg = first.trim_start_matches("error: ");
            return report(ErrorCategory::Config, msg);
        }
    };
    match dispatch(&cli) {
        Ok(dir) => {
            println!("run directory: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => report(e.category(), &e.to_string()),
    }
}
