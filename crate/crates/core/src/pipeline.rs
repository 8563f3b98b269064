//! End-to-end few-shot runs: per fold, sample an episode, fine-tune fresh
//! heads on a shared pretrained body, predict the test split and score it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{corpus_from_jsonl, parse_bio, BioOptions, Corpus, CorpusError, Split, TypeInventory};
use crate::encoder::mlm::{mlm_pretrain, MlmConfig};
use crate::encoder::{EncoderConfig, EncoderError, ModelParams, Vocab};
use crate::episode::{sample_episode, EpisodeError, EpisodeSpec};
use crate::eval::{aggregate, report_csv, span_f1, sweep_long_csv, sweep_table_csv, EvalError, EvalReport, FoldReport};
use crate::formulate::{FormulationVariant, DEFAULT_MASK};
use crate::predict::{predict_corpus, predictions_to_jsonl, PredictConfig, PredictError, SentencePrediction};
use crate::rng::{derive_seed, tag};
use crate::sampler::SamplerConfig;
use crate::trainer::{train, TrainConfig, TrainError, TrainStats};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("every fold failed; first error: {0}")]
    AllFoldsFailed(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl PipelineError {
    /// Whether the failure is a training divergence, as opposed to bad data.
    pub fn is_divergence(&self) -> bool {
        match self {
            PipelineError::Train(TrainError::DivergedAtEpoch { .. }) => true,
            PipelineError::AllFoldsFailed(msg) => msg.contains("diverged"),
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { dim: 64, layers: 2, heads: 4, max_len: 128, dropout: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub k_shots: usize,
    pub folds: u32,
    pub seed: u64,
    pub variant: FormulationVariant,
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Longest span scored at prediction; `None` uses the episode's longest
    /// entity plus two.
    pub max_span_len: Option<usize>,
    pub pretrain_steps: usize,
    pub pretrain_batch_size: usize,
    pub pretrain_learning_rate: f64,
    pub model: ModelSpec,
    /// Extra attempts, with new head seeds, after a fold diverges.
    pub max_restarts: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k_shots: 5,
            folds: 10,
            seed: 0,
            variant: FormulationVariant::Fff,
            alpha: 3.0,
            epochs: 30,
            batch_size: 32,
            learning_rate: 2e-4,
            weight_decay: 0.01,
            max_span_len: None,
            pretrain_steps: 1000,
            pretrain_batch_size: 32,
            pretrain_learning_rate: 1e-3,
            model: ModelSpec::default(),
            max_restarts: 2,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.k_shots == 0 {
            return bad("k_shots must be at least 1");
        }
        if self.folds == 0 {
            return bad("folds must be at least 1");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be a non-negative number");
        }
        if self.variant.inserted_len().is_none() {
            return bad("variant must be an encoder formulation");
        }
        if self.max_span_len == Some(0) {
            return bad("max_span_len must be at least 1");
        }
        Ok(())
    }

    /// Seed shared by every fold's head initialization, shuffling and
    /// negative sampling for `(fold, restart)`.
    pub fn fold_seed(&self, fold: u32, restart: usize) -> u64 {
        derive_seed(self.seed, &[tag::HEADS, u64::from(fold), restart as u64])
    }

    pub fn mlm_config(&self) -> MlmConfig {
        MlmConfig {
            steps: self.pretrain_steps,
            batch_size: self.pretrain_batch_size,
            learning_rate: self.pretrain_learning_rate,
            seed: derive_seed(self.seed, &[tag::MLM]),
            ..Default::default()
        }
    }
}

/// Randomly initialized body over the training text's vocabulary, then
/// masked-token pretraining on that text (when `pretrain_steps > 0`).
pub fn build_backbone(train: &Corpus, cfg: &RunConfig) -> Result<(ModelParams, Vec<f64>), PipelineError> {
    let vocab = Vocab::build(&train.sentences, DEFAULT_MASK);
    let mut enc = EncoderConfig::new(vocab, train.types.len());
    enc.dim = cfg.model.dim;
    enc.layers = cfg.model.layers;
    enc.heads = cfg.model.heads;
    enc.max_len = cfg.model.max_len;
    enc.dropout = cfg.model.dropout;
    let params = ModelParams::init(enc, derive_seed(cfg.seed, &[tag::INIT]))?;
    let out = mlm_pretrain(params, &train.sentences, &cfg.mlm_config())?;
    Ok((out.params, out.losses))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldOutcome {
    pub fold_id: u32,
    pub report: Option<FoldReport>,
    pub restarts: usize,
    /// Training stats of the attempt that produced the report (or of the
    /// last attempt).
    pub stats: TrainStats,
    pub error: Option<String>,
    pub predictions: Vec<SentencePrediction>,
}

pub fn run_fold(
    backbone: &ModelParams,
    train_corpus: &Corpus,
    test: &Corpus,
    cfg: &RunConfig,
    fold_id: u32,
) -> Result<FoldOutcome, PipelineError> {
    let episode = sample_episode(train_corpus, EpisodeSpec { k_shots: cfg.k_shots, seed: cfg.seed, fold_id })?;
    let joint = cfg.variant.joint_type_head();
    let mut restart = 0;
    let (params, stats) = loop {
        let seed = cfg.fold_seed(fold_id, restart);
        let heads = backbone.with_fresh_heads(train_corpus.types.len(), joint, seed)?;
        let tcfg = TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            seed,
            variant: cfg.variant,
            sampler: SamplerConfig { alpha: cfg.alpha, seed, ..Default::default() },
        };
        match train(&episode, heads, &tcfg) {
            Ok(done) => break done,
            Err(TrainError::DivergedAtEpoch { .. }) if restart < cfg.max_restarts => restart += 1,
            Err(e) => return Err(e.into()),
        }
    };
    let pcfg = PredictConfig {
        variant: cfg.variant,
        max_span_len: cfg.max_span_len.or(Some(episode.longest_entity() + 2)),
        ..Default::default()
    };
    let predictions = predict_corpus(&params, &test.sentences, &pcfg)?;
    let report = span_f1(fold_id, &test.sentences, &predictions)?;
    Ok(FoldOutcome { fold_id, report: Some(report), restarts: restart, stats, error: None, predictions })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub folds: Vec<FoldOutcome>,
    /// Aggregate over the folds that completed.
    pub report: EvalReport,
}

/// Runs every fold on an existing body. A failing fold is recorded and the
/// rest continue; the run fails only if no fold completes.
pub fn run_with_backbone(
    backbone: &ModelParams,
    train_corpus: &Corpus,
    test: &Corpus,
    cfg: &RunConfig,
) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    if test.types != train_corpus.types {
        return Err(PipelineError::Config("train and test corpora use different type inventories".into()));
    }
    let mut folds = Vec::new();
    for fold_id in 0..cfg.folds {
        let outcome = match run_fold(backbone, train_corpus, test, cfg, fold_id) {
            Ok(o) => o,
            Err(e @ (PipelineError::Train(_) | PipelineError::Episode(_))) => FoldOutcome {
                fold_id,
                report: None,
                restarts: cfg.max_restarts,
                stats: TrainStats::default(),
                error: Some(e.to_string()),
                predictions: Vec::new(),
            },
            Err(e) => return Err(e),
        };
        folds.push(outcome);
    }
    let done: Vec<FoldReport> = folds.iter().filter_map(|f| f.report).collect();
    if done.is_empty() {
        let first = folds.iter().find_map(|f| f.error.clone()).unwrap_or_default();
        return Err(PipelineError::AllFoldsFailed(first));
    }
    Ok(RunOutcome { report: aggregate(&done)?, folds })
}

pub fn run(train_corpus: &Corpus, test: &Corpus, cfg: &RunConfig) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let (backbone, _) = build_backbone(train_corpus, cfg)?;
    run_with_backbone(&backbone, train_corpus, test, cfg)
}

#[derive(Serialize)]
struct StatsLine<'a> {
    fold_id: u32,
    restarts: usize,
    #[serde(flatten)]
    epoch: &'a crate::trainer::EpochStats,
}

#[derive(Serialize)]
struct FailureLine<'a> {
    fold_id: u32,
    error: &'a str,
}

/// Writes `folds.csv`, `stats.jsonl`, `failures.jsonl` and one predictions
/// file per completed fold. Every file is a pure function of the outcome.
pub fn write_outputs(dir: &Path, outcome: &RunOutcome, types: &TypeInventory) -> Result<(), PipelineError> {
    fs::create_dir_all(dir.join("predictions")).map_err(io_err(dir))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))
    };
    write("folds.csv", report_csv(&outcome.report))?;
    let mut stats = String::new();
    let mut failures = String::new();
    for f in &outcome.folds {
        for e in &f.stats.epochs {
            let line = StatsLine { fold_id: f.fold_id, restarts: f.restarts, epoch: e };
            stats.push_str(&serde_json::to_string(&line).expect("stats serialize"));
            stats.push('\n');
        }
        if let Some(err) = &f.error {
            failures.push_str(&serde_json::to_string(&FailureLine { fold_id: f.fold_id, error: err }).expect("serialize"));
            failures.push('\n');
        }
        if f.report.is_some() {
            write(&format!("predictions/fold_{:02}.jsonl", f.fold_id), predictions_to_jsonl(&f.predictions, types))?;
        }
    }
    write("stats.jsonl", stats)?;
    write("failures.jsonl", failures)?;
    Ok(())
}

/// Reads a corpus as JSON lines (`.jsonl`/`.json`) or BIO (anything else).
pub fn load_corpus(path: &Path, split: Split, inventory: Option<&TypeInventory>, strict: bool) -> Result<Corpus, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let is_json = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"));
    let corpus = if is_json {
        corpus_from_jsonl(&text, inventory, split)?
    } else {
        parse_bio(&text, &BioOptions { strict, inventory: inventory.cloned(), split, ..Default::default() })?
    };
    Ok(corpus)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: RunConfig,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub output_dir: PathBuf,
    pub strict: bool,
    /// Per-fold seeds of the first attempt, for reference.
    pub fold_seeds: Vec<u64>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn new(config: RunConfig, train_path: PathBuf, test_path: PathBuf, output_dir: PathBuf) -> Self {
        let fold_seeds = (0..config.folds).map(|f| config.fold_seed(f, 0)).collect();
        Self {
            command: "run".into(),
            tool_version: TOOL_VERSION.into(),
            config,
            train_path,
            test_path,
            output_dir,
            strict: false,
            fold_seeds,
            wall_time_secs: 0.0,
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Manifest(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(path, text).map_err(io_err(path))
    }
}

/// Executes a manifest: loads both corpora, runs every fold, and writes the
/// outputs plus `manifest.json` (with the measured wall time) to
/// `manifest.output_dir`.
pub fn execute(manifest: &RunManifest) -> Result<RunOutcome, PipelineError> {
    let started = Instant::now();
    let train_corpus = load_corpus(&manifest.train_path, Split::Train, None, manifest.strict)?;
    let test = load_corpus(&manifest.test_path, Split::Test, Some(&train_corpus.types), manifest.strict)?;
    let outcome = run(&train_corpus, &test, &manifest.config)?;
    write_outputs(&manifest.output_dir, &outcome, &train_corpus.types)?;
    let mut done = manifest.clone();
    done.wall_time_secs = started.elapsed().as_secs_f64();
    done.save(&manifest.output_dir.join("manifest.json"))?;
    Ok(outcome)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub k_shots: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub parameter: String,
    pub value: String,
    pub outcome: RunOutcome,
}

/// One-dimensional sweeps around `base`: each alpha with the base shot
/// count, then each shot count with the base alpha. All points share one
/// pretrained body.
pub fn sweep(train_corpus: &Corpus, test: &Corpus, base: &RunConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>, PipelineError> {
    base.validate()?;
    let (backbone, _) = build_backbone(train_corpus, base)?;
    let mut rows = Vec::new();
    for &alpha in &grid.alphas {
        let cfg = RunConfig { alpha, ..base.clone() };
        let outcome = run_with_backbone(&backbone, train_corpus, test, &cfg)?;
        rows.push(SweepRow { parameter: "alpha".into(), value: alpha.to_string(), outcome });
    }
    for &k in &grid.k_shots {
        let cfg = RunConfig { k_shots: k, ..base.clone() };
        let outcome = run_with_backbone(&backbone, train_corpus, test, &cfg)?;
        rows.push(SweepRow { parameter: "k_shots".into(), value: k.to_string(), outcome });
    }
    Ok(rows)
}

/// `(table, long)` CSV texts for a sweep.
pub fn sweep_csvs(rows: &[SweepRow]) -> (String, String) {
    let flat: Vec<(String, String, EvalReport)> =
        rows.iter().map(|r| (r.parameter.clone(), r.value.clone(), r.outcome.report.clone())).collect();
    (sweep_table_csv(&flat), sweep_long_csv(&flat))
}
