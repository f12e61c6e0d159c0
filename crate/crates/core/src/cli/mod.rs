mod commands;
mod config;

use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    /// A check ran and found problems.
    Validation(String),
    Usage(String),
    Runtime(artilang::Error),
}

impl CliError {
    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Runtime(artilang::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<artilang::Error> for CliError {
    fn from(e: artilang::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "artilang", version, about = "Artificial pre-training languages, a small masked LM, dependency probes and transfer runs")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "ARTILANG_THREADS")]
    threads: Option<usize>,

    /// Log progress.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a corpus and its manifest.
    Generate(GenerateArgs),
    /// Check a corpus against the traits of its language.
    Validate(ValidateArgs),
    /// Length, span and divergence statistics of a corpus.
    Stats(StatsArgs),
    /// Train a masked language model on a corpus.
    Pretrain(PretrainArgs),
    /// Entropy-difference dependency probe of a trained model.
    Probe(ProbeArgs),
    /// Fine-tune on a synthetic downstream task.
    Finetune(FinetuneArgs),
    /// Turn a pair file into its adversarial identical-pair version.
    Adv(AdvArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Uniform,
    Unigram,
    Bigram,
    Flat,
    Nesting,
    Shuffle,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    /// Block size of the shuffle language.
    #[arg(long)]
    n: Option<usize>,
    /// Largest span of a flat-parentheses pair.
    #[arg(long = "max-span", visible_alias = "l")]
    max_span: Option<usize>,
    #[arg(long)]
    push_prob: Option<f64>,
    /// Zipf exponent of the token distribution.
    #[arg(long)]
    zipf: Option<f64>,
    /// Uni-gram distribution file.
    #[arg(long)]
    distribution: Option<PathBuf>,
    /// Bi-gram model file.
    #[arg(long)]
    bigram: Option<PathBuf>,
    /// Corpus to estimate the distribution or bi-gram model from.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    content_size: Option<u32>,
    #[arg(long)]
    sequences: Option<u64>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Generator spec to check against; defaults to the manifest's.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Pairing {
    Consecutive,
    Stack,
    None,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the pairing rule implied by the corpus language.
    #[arg(long, value_enum)]
    pairing: Option<Pairing>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    dtype: Option<artilang::mlm::DType>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_sequences: Option<usize>,
    /// Also report how often j* falls in the center's block.
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    PermPair,
    DupPresence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RemapArg {
    Identity,
    RandomPermutation,
    FrequencyRank,
    ReinitEmbeddings,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    /// Pre-trained checkpoint; omit to start from scratch.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, value_enum)]
    remap: Option<RemapArg>,
    #[arg(long)]
    remap_seed: Option<u64>,
    /// Number of fine-tuning seeds, starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    task_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    pooling: Option<artilang::transfer::Pooling>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    dev_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AdvArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose { "info" } else { "warn" }))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("usage: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Validate(a) => commands::validate(a),
        Command::Stats(a) => commands::stats(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Probe(a) => commands::probe(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Adv(a) => commands::adv(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
