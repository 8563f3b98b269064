//! Full-sentence inference: score every span, keep those with entity
//! probability at least 0.5, and resolve overlaps greedily.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{all_spans, spans_overlap, Sentence, Token, TypeInventory, TypedSpan};
use crate::corpus::JsonEntity;
use crate::encoder::loss::softmax;
use crate::encoder::{EncoderError, HeadOutput, SpanScorer};
use crate::formulate::{formulate, FormulateError, FormulationVariant};

pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("sentence {sentence_id}: formulated length {len} exceeds encoder capacity {max_len}")]
    TooLong { sentence_id: usize, len: usize, max_len: usize },
    #[error("sentence {sentence_id}: {source}")]
    Encoder { sentence_id: usize, source: EncoderError },
    #[error(transparent)]
    Formulate(#[from] FormulateError),
    #[error("predictions line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub span: (usize, usize),
    pub entity_prob: f64,
    pub type_id: usize,
    pub type_prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub variant: FormulationVariant,
    /// Longest span scored; `None` scores every span.
    pub max_span_len: Option<usize>,
    /// Instances per scoring call.
    pub batch_size: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { variant: FormulationVariant::Fff, max_span_len: None, batch_size: 256 }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Reads one span's probabilities off the heads. With the joint head the
/// entity probability is one minus the "no entity" probability and the
/// type is the best real type.
pub fn span_prediction(span: (usize, usize), out: &HeadOutput, variant: FormulationVariant) -> SpanPrediction {
    if variant.joint_type_head() {
        let probs = softmax(&out.which_type_logits);
        let types = probs.len() - 1;
        let type_id = argmax(&out.which_type_logits[..types]);
        SpanPrediction { span, entity_prob: 1.0 - probs[types], type_id, type_prob: probs[type_id] }
    } else {
        let ent = out.is_entity_logits.expect("split-head output carries is-entity logits");
        let type_id = argmax(&out.which_type_logits);
        SpanPrediction {
            span,
            entity_prob: softmax(&ent)[0],
            type_id,
            type_prob: softmax(&out.which_type_logits)[type_id],
        }
    }
}

pub fn score_sentence<S: SpanScorer + ?Sized>(
    scorer: &S,
    sentence: &Sentence,
    sentence_id: usize,
    cfg: &PredictConfig,
) -> Result<Vec<SpanPrediction>, PredictError> {
    let extra = cfg.variant.inserted_len().ok_or(FormulateError::UnsupportedVariant(cfg.variant))?;
    let len = sentence.len() + extra;
    if len > scorer.max_len() {
        return Err(PredictError::TooLong { sentence_id, len, max_len: scorer.max_len() });
    }
    let mask = Token::new(scorer.mask_token())
        .map_err(|e| PredictError::Encoder { sentence_id, source: EncoderError::Config(e.to_string()) })?;
    let spans = all_spans(sentence, cfg.max_span_len);
    let mut out = Vec::with_capacity(spans.len());
    for chunk in spans.chunks(cfg.batch_size.max(1)) {
        let instances =
            chunk.iter().map(|&s| formulate(sentence, s, cfg.variant, &mask)).collect::<Result<Vec<_>, _>>()?;
        let heads = scorer.score_batch(&instances).map_err(|source| PredictError::Encoder { sentence_id, source })?;
        out.extend(chunk.iter().zip(&heads).map(|(&s, h)| span_prediction(s, h, cfg.variant)));
    }
    Ok(out)
}

/// Acceptance order: higher probability, then earlier start, then shorter
/// span, then lower type id.
pub fn priority(a: &SpanPrediction, b: &SpanPrediction) -> Ordering {
    b.entity_prob
        .total_cmp(&a.entity_prob)
        .then(a.span.0.cmp(&b.span.0))
        .then((a.span.1 - a.span.0).cmp(&(b.span.1 - b.span.0)))
        .then(a.type_id.cmp(&b.type_id))
}

pub fn resolve(predictions: &[SpanPrediction]) -> Vec<TypedSpan> {
    let mut candidates: Vec<&SpanPrediction> = predictions.iter().filter(|p| p.entity_prob >= THRESHOLD).collect();
    candidates.sort_by(|a, b| priority(a, b));
    let mut accepted: Vec<TypedSpan> = Vec::new();
    for p in candidates {
        if accepted.iter().all(|e| !spans_overlap(e.bounds(), p.span)) {
            accepted.push(TypedSpan::new(p.span.0, p.span.1, p.type_id));
        }
    }
    accepted.sort();
    accepted
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePrediction {
    pub sentence_id: usize,
    pub entities: Vec<TypedSpan>,
}

/// Scores and resolves every sentence, in parallel; output order follows
/// the input.
pub fn predict_corpus<S: SpanScorer + ?Sized>(
    scorer: &S,
    sentences: &[Sentence],
    cfg: &PredictConfig,
) -> Result<Vec<SentencePrediction>, PredictError> {
    sentences
        .par_iter()
        .enumerate()
        .map(|(sentence_id, s)| {
            let preds = score_sentence(scorer, s, sentence_id, cfg)?;
            Ok(SentencePrediction { sentence_id, entities: resolve(&preds) })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    sentence_id: usize,
    entities: Vec<JsonEntity>,
}

pub fn predictions_to_jsonl(predictions: &[SentencePrediction], types: &TypeInventory) -> String {
    let mut out = String::new();
    for p in predictions {
        let rec = PredictionRecord {
            sentence_id: p.sentence_id,
            entities: p
                .entities
                .iter()
                .map(|e| JsonEntity {
                    start: e.start,
                    end: e.end,
                    type_name: types.name(e.type_id).unwrap_or("UNK").to_string(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

pub fn predictions_from_jsonl(text: &str, types: &TypeInventory) -> Result<Vec<SentencePrediction>, PredictError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| PredictError::Parse { line: idx + 1, message };
        let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let entities = rec
            .entities
            .into_iter()
            .map(|e| {
                let t = types.id_of(&e.type_name).ok_or_else(|| err(format!("unknown type `{}`", e.type_name)))?;
                Ok(TypedSpan::new(e.start, e.end, t))
            })
            .collect::<Result<Vec<_>, PredictError>>()?;
        out.push(SentencePrediction { sentence_id: rec.sentence_id, entities });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(l: usize, r: usize, prob: f64, t: usize) -> SpanPrediction {
        SpanPrediction { span: (l, r), entity_prob: prob, type_id: t, type_prob: 1.0 }
    }

    #[test]
    fn greedy_hand_trace() {
        let (loc, per) = (0, 1);
        let got = resolve(&[p(0, 1, 0.9, loc), p(1, 2, 0.8, per), p(3, 3, 0.7, per)]);
        assert_eq!(got, vec![TypedSpan::new(0, 1, loc), TypedSpan::new(3, 3, per)]);
    }

    #[test]
    fn below_threshold_is_dropped_and_threshold_is_closed() {
        assert!(resolve(&[p(0, 0, 0.49, 0), p(1, 2, 0.1, 1)]).is_empty());
        assert_eq!(resolve(&[p(0, 0, 0.5, 0)]), vec![TypedSpan::new(0, 0, 0)]);
    }

    #[test]
    fn ties_prefer_earlier_then_shorter() {
        let got = resolve(&[p(1, 3, 0.8, 0), p(0, 2, 0.8, 1), p(0, 1, 0.8, 2)]);
        assert_eq!(got, vec![TypedSpan::new(0, 1, 2)]);
    }

    #[test]
    fn disjoint_spans_all_accepted_in_any_order() {
        let a = [p(0, 0, 0.6, 0), p(2, 3, 0.9, 1), p(5, 5, 0.7, 0)];
        let mut b = a;
        b.reverse();
        assert_eq!(resolve(&a).len(), 3);
        assert_eq!(resolve(&a), resolve(&b));
    }

    #[test]
    fn joint_head_probabilities() {
        let out = HeadOutput { is_entity_logits: None, which_type_logits: vec![1.0, 2.0, 0.0] };
        let sp = span_prediction((0, 0), &out, FormulationVariant::SpanTypeTogether);
        let z = 1f64.exp() + 2f64.exp() + 1.0;
        assert!((sp.entity_prob - (1.0 - 1.0 / z)).abs() < 1e-12);
        assert_eq!(sp.type_id, 1);
        assert!((sp.type_prob - 2f64.exp() / z).abs() < 1e-12);
    }

    #[test]
    fn jsonl_round_trip() {
        let types = TypeInventory::new(vec!["LOC".into(), "PER".into()]).unwrap();
        let preds = vec![
            SentencePrediction { sentence_id: 0, entities: vec![TypedSpan::new(0, 0, 1), TypedSpan::new(3, 4, 0)] },
            SentencePrediction { sentence_id: 1, entities: vec![] },
        ];
        let text = predictions_to_jsonl(&preds, &types);
        assert!(text.starts_with(r#"{"sentence_id":0,"entities":[{"start":0,"end":0,"type":"PER"}"#));
        assert_eq!(predictions_from_jsonl(&text, &types).unwrap(), preds);
    }
}
