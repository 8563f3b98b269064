//! Span micro-F1, aggregation over folds, and paired significance tests.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::corpus::{Sentence, TypedSpan};
use crate::predict::SentencePrediction;
use crate::rng::{stream_rng, tag};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{gold} gold sentences but {predicted} prediction records")]
    LengthMismatch { gold: usize, predicted: usize },
    #[error("prediction record {index} has sentence id {found}")]
    IdMismatch { index: usize, found: usize },
    #[error("sentence {sentence_id}: span ({start}, {end}) predicted more than once")]
    DuplicateSpan { sentence_id: usize, start: usize, end: usize },
    #[error("no folds to aggregate")]
    NoFolds,
    #[error("comparison needs at least two folds, got {0}")]
    TooFewFolds(usize),
    #[error("reports cover different folds")]
    FoldMismatch,
    #[error("csv row {row}: {message}")]
    Csv { row: usize, message: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        if self.predicted == 0 {
            0.0
        } else {
            self.correct as f64 / self.predicted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.correct as f64 / self.gold as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Exact-match `(start, end, type)` counts, micro-summed over the corpus.
/// Record `i` must carry sentence id `i`.
pub fn span_counts(gold: &[Sentence], predicted: &[SentencePrediction]) -> Result<Counts, EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), predicted: predicted.len() });
    }
    let mut counts = Counts::default();
    for (index, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if p.sentence_id != index {
            return Err(EvalError::IdMismatch { index, found: p.sentence_id });
        }
        let mut seen = BTreeSet::new();
        for e in &p.entities {
            if !seen.insert(e.bounds()) {
                return Err(EvalError::DuplicateSpan { sentence_id: index, start: e.start, end: e.end });
            }
        }
        let gold_set: BTreeSet<&TypedSpan> = g.entities().iter().collect();
        counts.gold += gold_set.len();
        counts.predicted += p.entities.len();
        counts.correct += p.entities.iter().filter(|e| gold_set.contains(e)).count();
    }
    Ok(counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_id: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl FoldReport {
    pub fn from_counts(fold_id: u32, c: Counts) -> Self {
        Self {
            fold_id,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            gold: c.gold,
            predicted: c.predicted,
            correct: c.correct,
        }
    }
}

pub fn span_f1(fold_id: u32, gold: &[Sentence], predicted: &[SentencePrediction]) -> Result<FoldReport, EvalError> {
    span_counts(gold, predicted).map(|c| FoldReport::from_counts(fold_id, c))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldReport>,
    pub mean_f1: f64,
    /// Sample standard deviation; `None` with a single fold.
    pub std_f1: Option<f64>,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

impl EvalReport {
    pub fn fold_count(&self) -> usize {
        self.folds.len()
    }

    pub fn f1s(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.f1).collect()
    }

    /// Standard error of the mean F1.
    pub fn std_error(&self) -> Option<f64> {
        self.std_f1.map(|s| s / (self.folds.len() as f64).sqrt())
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n − 1) standard deviation; `None` below two values.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

pub fn aggregate(folds: &[FoldReport]) -> Result<EvalReport, EvalError> {
    if folds.is_empty() {
        return Err(EvalError::NoFolds);
    }
    let pick = |f: fn(&FoldReport) -> f64| folds.iter().map(f).collect::<Vec<_>>();
    let f1s = pick(|f| f.f1);
    Ok(EvalReport {
        folds: folds.to_vec(),
        mean_f1: mean(&f1s),
        std_f1: sample_std(&f1s),
        mean_precision: mean(&pick(|f| f.precision)),
        mean_recall: mean(&pick(|f| f.recall)),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceTest {
    #[default]
    PairedT,
    /// Sign-flip permutation test; exact up to 16 folds, otherwise
    /// `rounds` random flips.
    Permutation { rounds: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub p_value: f64,
    /// Mean of `a − b` over folds.
    pub mean_difference: f64,
}

impl Comparison {
    pub fn significant(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Paired two-sided t-test. All-zero differences give p = 1; nonzero
/// differences with zero variance give p = 0.
pub fn paired_t_test(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let m = mean(diffs);
    if diffs.iter().all(|&d| d == 0.0) {
        return 1.0;
    }
    let s = sample_std(diffs).unwrap_or(0.0);
    if s == 0.0 {
        return 0.0;
    }
    let t = m / (s / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Two-sided sign-flip permutation p-value for a zero mean difference.
pub fn permutation_test(diffs: &[f64], rounds: usize, seed: u64) -> f64 {
    let n = diffs.len();
    let observed = mean(diffs).abs();
    let tol = 1e-12 * (1.0 + observed);
    let flipped_mean = |bits: u64| {
        diffs.iter().enumerate().map(|(i, d)| if bits >> i & 1 == 1 { -d } else { *d }).sum::<f64>() / n as f64
    };
    if n <= 16 {
        let total = 1u64 << n;
        let hits = (0..total).filter(|&b| flipped_mean(b).abs() >= observed - tol).count();
        hits as f64 / total as f64
    } else {
        let mut rng = stream_rng(seed, &[tag::PERMUTATION]);
        let rounds = rounds.max(1);
        let hits = (0..rounds)
            .filter(|_| {
                let m = diffs.iter().map(|d| if rng.random::<bool>() { -d } else { *d }).sum::<f64>() / n as f64;
                m.abs() >= observed - tol
            })
            .count();
        (hits + 1) as f64 / (rounds + 1) as f64
    }
}

/// Compares two reports fold by fold (matched on fold id).
pub fn compare(a: &EvalReport, b: &EvalReport, test: SignificanceTest) -> Result<Comparison, EvalError> {
    let ids = |r: &EvalReport| r.folds.iter().map(|f| f.fold_id).collect::<Vec<_>>();
    let (mut ia, mut ib) = (ids(a), ids(b));
    ia.sort_unstable();
    ib.sort_unstable();
    if ia != ib || ia.windows(2).any(|w| w[0] == w[1]) {
        return Err(EvalError::FoldMismatch);
    }
    if ia.len() < 2 {
        return Err(EvalError::TooFewFolds(ia.len()));
    }
    let f1_of = |r: &EvalReport, id: u32| r.folds.iter().find(|f| f.fold_id == id).map(|f| f.f1).unwrap_or(0.0);
    let diffs: Vec<f64> = ia.iter().map(|&id| f1_of(a, id) - f1_of(b, id)).collect();
    let p_value = match test {
        SignificanceTest::PairedT => paired_t_test(&diffs),
        SignificanceTest::Permutation { rounds, seed } => permutation_test(&diffs, rounds, seed),
    };
    Ok(Comparison { p_value, mean_difference: mean(&diffs) })
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

/// Per-fold rows followed by `mean` and `std` rows.
pub fn report_csv(report: &EvalReport) -> String {
    let mut rows = vec![["fold_id", "precision", "recall", "f1", "gold", "predicted", "correct"]
        .map(String::from)
        .to_vec()];
    for f in &report.folds {
        rows.push(vec![
            f.fold_id.to_string(),
            f.precision.to_string(),
            f.recall.to_string(),
            f.f1.to_string(),
            f.gold.to_string(),
            f.predicted.to_string(),
            f.correct.to_string(),
        ]);
    }
    let col_std = |f: fn(&FoldReport) -> f64| {
        sample_std(&report.folds.iter().map(f).collect::<Vec<_>>()).map(|s| s.to_string()).unwrap_or_default()
    };
    rows.push(vec![
        "mean".into(),
        report.mean_precision.to_string(),
        report.mean_recall.to_string(),
        report.mean_f1.to_string(),
        String::new(),
        String::new(),
        String::new(),
    ]);
    rows.push(vec![
        "std".into(),
        col_std(|f| f.precision),
        col_std(|f| f.recall),
        report.std_f1.map(|s| s.to_string()).unwrap_or_default(),
        String::new(),
        String::new(),
        String::new(),
    ]);
    csv_string(rows)
}

/// Reads the per-fold rows of a [`report_csv`] file back and re-aggregates
/// them; the `mean` and `std` rows are skipped.
pub fn read_report_csv(text: &str) -> Result<EvalReport, EvalError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut folds = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let bad = |m: String| EvalError::Csv { row: i + 2, message: m };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let Ok(fold_id) = rec.get(0).unwrap_or_default().parse::<u32>() else { continue };
        let float = |k: usize| rec.get(k).unwrap_or_default().parse::<f64>().map_err(|e| bad(e.to_string()));
        let count = |k: usize| rec.get(k).unwrap_or_default().parse::<usize>().map_err(|e| bad(e.to_string()));
        folds.push(FoldReport {
            fold_id,
            precision: float(1)?,
            recall: float(2)?,
            f1: float(3)?,
            gold: count(4)?,
            predicted: count(5)?,
            correct: count(6)?,
        });
    }
    aggregate(&folds)
}

/// One row per grid point: `parameter, value, folds, mean_f1, std_f1`.
pub fn sweep_table_csv(rows: &[(String, String, EvalReport)]) -> String {
    let mut out = vec![["parameter", "value", "folds", "mean_f1", "std_f1"].map(String::from).to_vec()];
    for (param, value, r) in rows {
        out.push(vec![
            param.clone(),
            value.clone(),
            r.fold_count().to_string(),
            r.mean_f1.to_string(),
            r.std_f1.map(|s| s.to_string()).unwrap_or_default(),
        ]);
    }
    csv_string(out)
}

/// Long format, one row per grid point and fold.
pub fn sweep_long_csv(rows: &[(String, String, EvalReport)]) -> String {
    let mut out = vec![["parameter", "value", "fold_id", "precision", "recall", "f1"].map(String::from).to_vec()];
    for (param, value, r) in rows {
        for f in &r.folds {
            out.push(vec![
                param.clone(),
                value.clone(),
                f.fold_id.to_string(),
                f.precision.to_string(),
                f.recall.to_string(),
                f.f1.to_string(),
            ]);
        }
    }
    csv_string(out)
}
