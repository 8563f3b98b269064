//! `fffner`: command-line driver for few-shot NER experiments.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use fffner::formulate::{FormulationVariant, LinearFormat};

#[derive(Parser, Debug)]
#[command(name = "fffner", version, about = "Few-shot NER by span formulation over a masked-token encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Parse a BIO file into a JSON-lines corpus.
    Ingest(IngestArgs),
    /// Generate a synthetic BIO corpus.
    Synth(SynthArgs),
    /// Render a corpus as bracketed target sequences, one per line.
    Linearize(LinearizeArgs),
    /// Parse bracketed target sequences back into a corpus.
    Delinearize(DelinearizeArgs),
    /// Draw an N-way K-shot episode from a training corpus.
    SampleEpisode(SampleEpisodeArgs),
    /// Few-shot train, predict and score over several folds.
    Run(RunArgs),
    /// Repeat runs over a grid of alpha values and shot counts.
    Sweep(SweepArgs),
    /// Compare two runs' per-fold F1 with a paired significance test.
    Compare(CompareArgs),
    /// Re-execute the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct IngestArgs {
    /// BIO input: one `token tag` pair per line, blank lines between sentences.
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Reject dangling `I-` tags instead of repairing them.
    #[arg(long, env = "FFFNER_STRICT")]
    pub strict: bool,
    /// Comma-separated type inventory; inferred from the file when absent.
    #[arg(long, value_delimiter = ',')]
    pub types: Option<Vec<String>>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long = "types", default_value_t = 4, env = "FFFNER_TYPES")]
    pub types: usize,
    #[arg(long, default_value_t = 1000, env = "FFFNER_SENTENCES")]
    pub sentences: usize,
    #[arg(long, default_value_t = 0, env = "FFFNER_SEED")]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Genre,
    Tanl,
}

impl From<FormatArg> for LinearFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Genre => LinearFormat::Genre,
            FormatArg::Tanl => LinearFormat::Tanl,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct LinearizeArgs {
    #[arg(long, value_enum)]
    pub format: FormatArg,
    /// Corpus, as JSON lines (`.jsonl`) or BIO.
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DelinearizeArgs {
    #[arg(long, value_enum)]
    pub format: FormatArg,
    #[arg(short, long)]
    pub input: PathBuf,
    /// JSON-lines corpus output.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Comma-separated type inventory.
    #[arg(long, value_delimiter = ',', required = true)]
    pub types: Vec<String>,
    /// Repair malformed markup instead of failing; repairs are counted.
    #[arg(long, env = "FFFNER_LENIENT")]
    pub lenient: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SampleEpisodeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(short = 'k', long = "k", default_value_t = 5, env = "FFFNER_K")]
    pub k: usize,
    #[arg(long, default_value_t = 0, env = "FFFNER_SEED")]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub fold: u32,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum VariantArg {
    Fff,
    NotMask,
    NoBrackets,
    SpanTypeTogether,
}

impl From<VariantArg> for FormulationVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Fff => FormulationVariant::Fff,
            VariantArg::NotMask => FormulationVariant::NotMask,
            VariantArg::NoBrackets => FormulationVariant::NoBrackets,
            VariantArg::SpanTypeTogether => FormulationVariant::SpanTypeTogether,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentArgs {
    #[arg(long, env = "FFFNER_TRAIN")]
    pub train: PathBuf,
    #[arg(long, env = "FFFNER_TEST")]
    pub test: PathBuf,
    #[arg(long = "out", env = "FFFNER_OUT")]
    pub out: PathBuf,
    #[arg(short = 'k', long = "k", default_value_t = 5, env = "FFFNER_K")]
    pub k: usize,
    #[arg(long, default_value_t = 10, env = "FFFNER_FOLDS")]
    pub folds: u32,
    #[arg(long, default_value_t = 3.0, env = "FFFNER_ALPHA")]
    pub alpha: f64,
    #[arg(long, default_value_t = 30, env = "FFFNER_EPOCHS")]
    pub epochs: usize,
    #[arg(long, default_value_t = 32, env = "FFFNER_BATCH_SIZE")]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-4, env = "FFFNER_LR")]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01, env = "FFFNER_WEIGHT_DECAY")]
    pub weight_decay: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Fff, env = "FFFNER_VARIANT")]
    pub variant: VariantArg,
    /// Longest span scored at prediction; defaults to the episode's longest
    /// entity plus two.
    #[arg(long, env = "FFFNER_MAX_SPAN_LEN")]
    pub max_span_len: Option<usize>,
    #[arg(long, default_value_t = 0, env = "FFFNER_SEED")]
    pub seed: u64,
    /// Masked-token pretraining steps on the training text; 0 disables it.
    #[arg(long, default_value_t = 1000, env = "FFFNER_PRETRAIN_STEPS")]
    pub pretrain_steps: usize,
    #[arg(long, default_value_t = 1e-3, env = "FFFNER_PRETRAIN_LR")]
    pub pretrain_lr: f64,
    #[arg(long, default_value_t = 64, env = "FFFNER_DIM")]
    pub dim: usize,
    #[arg(long, default_value_t = 2, env = "FFFNER_LAYERS")]
    pub layers: usize,
    #[arg(long, default_value_t = 4, env = "FFFNER_HEADS")]
    pub heads: usize,
    #[arg(long, default_value_t = 128, env = "FFFNER_MAX_LEN")]
    pub max_len: usize,
    #[arg(long, default_value_t = 0.1, env = "FFFNER_DROPOUT")]
    pub dropout: f64,
    #[arg(long, default_value_t = 2, env = "FFFNER_MAX_RESTARTS")]
    pub max_restarts: usize,
    #[arg(long, env = "FFFNER_STRICT")]
    pub strict: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RunArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub exp: ExperimentArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 3.0, 5.0])]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 50])]
    pub shots: Vec<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CompareArgs {
    /// `folds.csv` of the first run.
    pub a: PathBuf,
    /// `folds.csv` of the second run.
    pub b: PathBuf,
    /// Use a sign-flip permutation test instead of the paired t-test.
    #[arg(long)]
    pub permutation: bool,
    #[arg(long, default_value_t = 10000)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
