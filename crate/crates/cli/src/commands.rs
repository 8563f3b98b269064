use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use fffner::corpus::{corpus_to_jsonl, emit_bio, parse_bio, BioOptions, Corpus, Sentence, Split, Token, TypeInventory};
use fffner::episode::{sample_episode, save_episode, EpisodeSpec};
use fffner::eval::{compare, read_report_csv, SignificanceTest};
use fffner::formulate::{delinearize, linearize, LinearFormat, ParseMode};
use fffner::pipeline::{
    execute, load_corpus, sweep, sweep_csvs, ModelSpec, PipelineError, RunConfig, RunManifest, SweepGrid, TOOL_VERSION,
};
use fffner::synth::{synthesize, SynthConfig};

use crate::{
    Command, CompareArgs, DelinearizeArgs, ExperimentArgs, IngestArgs, LinearizeArgs, ReplayArgs, SampleEpisodeArgs,
    SweepArgs, SynthArgs,
};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Divergence(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Divergence(m) => f.write_str(m),
        }
    }
}

fn data(e: impl fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn from_pipeline(e: PipelineError) -> Failure {
    if e.is_divergence() {
        Failure::Divergence(e.to_string())
    } else if matches!(e, PipelineError::Config(_)) {
        Failure::Usage(e.to_string())
    } else {
        Failure::Data(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// Manifest of every command except `run`, which records a
/// [`RunManifest`] instead.
#[derive(Serialize, Deserialize)]
struct ToolManifest {
    #[serde(flatten)]
    invocation: Command,
    tool_version: String,
    outputs: Vec<PathBuf>,
    wall_time_secs: f64,
}

fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn save_tool_manifest(cmd: &Command, outputs: Vec<PathBuf>, at: &Path, started: Instant) -> Result<(), Failure> {
    let m = ToolManifest {
        invocation: cmd.clone(),
        tool_version: TOOL_VERSION.into(),
        outputs,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    write(at, &(serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n"))
}

pub fn dispatch(cmd: &Command) -> Result<(), Failure> {
    let started = Instant::now();
    match cmd {
        Command::Ingest(a) => {
            ingest(a)?;
            save_tool_manifest(cmd, vec![a.output.clone()], &manifest_path_for(&a.output), started)
        }
        Command::Synth(a) => {
            synth(a)?;
            save_tool_manifest(cmd, vec![a.output.clone()], &manifest_path_for(&a.output), started)
        }
        Command::Linearize(a) => {
            linearize_cmd(a)?;
            save_tool_manifest(cmd, vec![a.output.clone()], &manifest_path_for(&a.output), started)
        }
        Command::Delinearize(a) => {
            delinearize_cmd(a)?;
            save_tool_manifest(cmd, vec![a.output.clone()], &manifest_path_for(&a.output), started)
        }
        Command::SampleEpisode(a) => {
            sample_episode_cmd(a)?;
            save_tool_manifest(cmd, vec![a.output.clone()], &manifest_path_for(&a.output), started)
        }
        Command::Run(a) => run_cmd(&a.exp),
        Command::Sweep(a) => {
            let outputs = sweep_cmd(a)?;
            save_tool_manifest(cmd, outputs, &a.exp.out.join("manifest.json"), started)
        }
        Command::Compare(a) => compare_cmd(a),
        Command::Replay(a) => replay(a),
    }
}

fn inventory(names: &Option<Vec<String>>) -> Result<Option<TypeInventory>, Failure> {
    names.clone().map(TypeInventory::new).transpose().map_err(|e| Failure::Usage(e.to_string()))
}

fn ingest(a: &IngestArgs) -> Result<(), Failure> {
    let text = read(&a.input)?;
    let opts = BioOptions { strict: a.strict, inventory: inventory(&a.types)?, split: Split::Train, ..Default::default() };
    let corpus = parse_bio(&text, &opts).map_err(|e| Failure::Data(format!("{}: {e}", a.input.display())))?;
    write(&a.output, &corpus_to_jsonl(&corpus))?;
    eprintln!("{} sentences, {} entities, types {:?}", corpus.len(), corpus.entity_count(), corpus.types.names());
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let cfg = SynthConfig { types: a.types, sentences: a.sentences, seed: a.seed };
    let corpus = synthesize(&cfg, Split::Train).map_err(|e| Failure::Usage(e.to_string()))?;
    write(&a.output, &emit_bio(&corpus))?;
    eprintln!(
        "{} sentences, {} entities, token:entity ratio {:.2}",
        corpus.len(),
        corpus.entity_count(),
        corpus.token_count() as f64 / corpus.entity_count().max(1) as f64
    );
    Ok(())
}

fn linearize_cmd(a: &LinearizeArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&a.input, Split::Train, None, false).map_err(from_pipeline)?;
    let format = LinearFormat::from(a.format);
    let mut out = String::new();
    for s in &corpus.sentences {
        let toks = linearize(s, format, &corpus.types);
        out.push_str(&toks.iter().map(Token::as_str).collect::<Vec<_>>().join(" "));
        out.push('\n');
    }
    write(&a.output, &out)
}

fn delinearize_cmd(a: &DelinearizeArgs) -> Result<(), Failure> {
    let types = TypeInventory::new(a.types.clone()).map_err(|e| Failure::Usage(e.to_string()))?;
    let format = LinearFormat::from(a.format);
    let text = read(&a.input)?;
    let mut sentences: Vec<Sentence> = Vec::new();
    let (mut repaired, mut dropped) = (0usize, 0usize);
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let tokens = line
            .split_whitespace()
            .map(Token::new)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::Data(format!("line {}: {e}", idx + 1)))?;
        match delinearize(&tokens, format, &types, ParseMode::Strict) {
            Ok(s) => sentences.push(s),
            Err(e) if !a.lenient => return Err(Failure::Data(format!("{}: line {}: {e}", a.input.display(), idx + 1))),
            Err(_) => match delinearize(&tokens, format, &types, ParseMode::Lenient) {
                Ok(s) => {
                    repaired += 1;
                    sentences.push(s);
                }
                Err(_) => dropped += 1,
            },
        }
    }
    let corpus = Corpus::new(sentences, types, Split::Train).map_err(data)?;
    write(&a.output, &corpus_to_jsonl(&corpus))?;
    if a.lenient {
        eprintln!("warnings: {} lines repaired, {} lines dropped", repaired, dropped);
    }
    Ok(())
}

fn sample_episode_cmd(a: &SampleEpisodeArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&a.corpus, Split::Train, None, false).map_err(from_pipeline)?;
    let ep = sample_episode(&corpus, EpisodeSpec { k_shots: a.k, seed: a.seed, fold_id: a.fold }).map_err(data)?;
    if let Some(dir) = a.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(data)?;
    }
    save_episode(&ep, &a.output).map_err(|e| Failure::Data(format!("{}: {e}", a.output.display())))?;
    eprintln!("{} sentences for {} types", ep.sentences.len(), ep.types.len());
    Ok(())
}

pub fn run_config(e: &ExperimentArgs) -> RunConfig {
    RunConfig {
        k_shots: e.k,
        folds: e.folds,
        seed: e.seed,
        variant: e.variant.into(),
        alpha: e.alpha,
        epochs: e.epochs,
        batch_size: e.batch_size,
        learning_rate: e.lr,
        weight_decay: e.weight_decay,
        max_span_len: e.max_span_len,
        pretrain_steps: e.pretrain_steps,
        pretrain_learning_rate: e.pretrain_lr,
        model: ModelSpec { dim: e.dim, layers: e.layers, heads: e.heads, max_len: e.max_len, dropout: e.dropout },
        max_restarts: e.max_restarts,
        ..Default::default()
    }
}

fn run_cmd(e: &ExperimentArgs) -> Result<(), Failure> {
    let cfg = run_config(e);
    cfg.validate().map_err(from_pipeline)?;
    let mut manifest = RunManifest::new(cfg, e.train.clone(), e.test.clone(), e.out.clone());
    manifest.strict = e.strict;
    execute_manifest(&manifest)
}

fn execute_manifest(manifest: &RunManifest) -> Result<(), Failure> {
    let outcome = execute(manifest).map_err(from_pipeline)?;
    for f in &outcome.folds {
        match (&f.report, &f.error) {
            (Some(r), _) => eprintln!("fold {:>2}: P {:.4} R {:.4} F1 {:.4}", f.fold_id, r.precision, r.recall, r.f1),
            (None, Some(err)) => eprintln!("fold {:>2}: failed: {err}", f.fold_id),
            (None, None) => {}
        }
    }
    let r = &outcome.report;
    match r.std_f1 {
        Some(s) => println!("F1 {:.4} ± {:.4} over {} folds", r.mean_f1, s, r.fold_count()),
        None => println!("F1 {:.4} over {} fold", r.mean_f1, r.fold_count()),
    }
    Ok(())
}

fn sweep_cmd(a: &SweepArgs) -> Result<Vec<PathBuf>, Failure> {
    let base = run_config(&a.exp);
    base.validate().map_err(from_pipeline)?;
    let train = load_corpus(&a.exp.train, Split::Train, None, a.exp.strict).map_err(from_pipeline)?;
    let test = load_corpus(&a.exp.test, Split::Test, Some(&train.types), a.exp.strict).map_err(from_pipeline)?;
    let grid = SweepGrid { alphas: a.alphas.clone(), k_shots: a.shots.clone() };
    let rows = sweep(&train, &test, &base, &grid).map_err(from_pipeline)?;
    let (table, long) = sweep_csvs(&rows);
    let table_path = a.exp.out.join("sweep_table.csv");
    let long_path = a.exp.out.join("sweep_long.csv");
    write(&table_path, &table)?;
    write(&long_path, &long)?;
    print!("{table}");
    Ok(vec![table_path, long_path])
}

fn compare_cmd(a: &CompareArgs) -> Result<(), Failure> {
    let ra = read_report_csv(&read(&a.a)?).map_err(data)?;
    let rb = read_report_csv(&read(&a.b)?).map_err(data)?;
    let test = if a.permutation {
        SignificanceTest::Permutation { rounds: a.rounds, seed: a.seed }
    } else {
        SignificanceTest::PairedT
    };
    let c = compare(&ra, &rb, test).map_err(data)?;
    let out = serde_json::json!({
        "mean_f1_a": ra.mean_f1,
        "mean_f1_b": rb.mean_f1,
        "mean_difference": c.mean_difference,
        "p_value": c.p_value,
        "significant_at_0.05": c.significant(0.05),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(())
}

fn with_output(cmd: &Command, out: &Path) -> Command {
    let mut cmd = cmd.clone();
    match &mut cmd {
        Command::Ingest(a) => a.output = out.to_path_buf(),
        Command::Synth(a) => a.output = out.to_path_buf(),
        Command::Linearize(a) => a.output = out.to_path_buf(),
        Command::Delinearize(a) => a.output = out.to_path_buf(),
        Command::SampleEpisode(a) => a.output = out.to_path_buf(),
        Command::Run(a) => a.exp.out = out.to_path_buf(),
        Command::Sweep(a) => a.exp.out = out.to_path_buf(),
        Command::Compare(_) | Command::Replay(_) => {}
    }
    cmd
}

fn replay(a: &ReplayArgs) -> Result<(), Failure> {
    let text = read(&a.manifest)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::Data(format!("manifest: {e}")))?;
    if value.get("command").and_then(|c| c.as_str()) == Some("run") {
        let mut m: RunManifest = serde_json::from_value(value).map_err(|e| Failure::Data(format!("manifest: {e}")))?;
        if let Some(out) = &a.out {
            m.output_dir = out.clone();
        }
        return execute_manifest(&m);
    }
    let m: ToolManifest = serde_json::from_value(value).map_err(|e| Failure::Data(format!("manifest: {e}")))?;
    if matches!(m.invocation, Command::Replay(_)) {
        return Err(Failure::Usage("a replay manifest cannot be replayed".into()));
    }
    let cmd = match &a.out {
        Some(out) => with_output(&m.invocation, out),
        None => m.invocation,
    };
    dispatch(&cmd)
}
