//! Command-line front end: corpus synthesis, per-source training, separation,
//! scoring and full comparison experiments.

pub mod commands;
pub mod config;
pub mod corpus_io;
mod error;
pub mod experiment;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gensep::models::ModelKind;

pub use config::RunConfig;
pub use error::{CliError, CliResult, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL};

#[derive(Debug, Parser)]
#[command(name = "gensep", version, about = "Source separation with generative spectrogram models")]
pub struct Cli {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for corpus synthesis, training and separation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for independent cells (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory (a file for `evaluate`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-speaker corpus.
    Synth(SynthArgs),
    /// Train one model per source for corpus pairs.
    Train(TrainArgs),
    /// Separate a mixture with two trained source models.
    Separate(SeparateArgs),
    /// Score two estimates against two references.
    Evaluate(EvaluateArgs),
    /// Train, separate and score every (pair, model) cell.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Seconds of training speech per source.
    #[arg(long)]
    pub train_secs: Option<f64>,
    /// Seconds of the test utterance mixed for separation.
    #[arg(long)]
    pub test_secs: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Pair id to train; every pair when omitted.
    #[arg(long)]
    pub pair: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[arg(long, num_args = 2, required = true, value_names = ["SOURCE_1", "SOURCE_2"])]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub mixture: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, num_args = 2, required = true, value_names = ["EST_1", "EST_2"])]
    pub estimates: Vec<PathBuf>,
    #[arg(long, num_args = 2, required = true, value_names = ["REF_1", "REF_2"])]
    pub references: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Corpus directory written by `synth`; synthesized in memory when omitted.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Comma-separated model kinds, in result order.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<ModelKind>>,
    #[arg(long)]
    pub train_iterations: Option<usize>,
    #[arg(long)]
    pub separation_iterations: Option<usize>,
    /// Fill the runtime column of results.csv.
    #[arg(long)]
    pub record_runtime: bool,
}

/// Loads the configuration file (if any) and applies the global flags.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir.clone_from(out);
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let cfg = resolve_config(&cli)?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => commands::synth(cfg, a).map(|_| ()),
        Command::Train(a) => commands::train(cfg, a).map(|_| ()),
        Command::Separate(a) => commands::separate(cfg, a).map(|_| ()),
        Command::Evaluate(a) => commands::evaluate(a, cli.out.as_deref()),
        Command::Experiment(a) => commands::experiment(cfg, a).map(|_| ()),
    })
}
