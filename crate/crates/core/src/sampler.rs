//! Per-epoch negative spans.
//!
//! A sentence of `n` tokens with `|E|` gold entities gets
//! `round(alpha * (n + ratio * |E|))` negatives, capped by the number of
//! non-entity spans. Each candidate `(l, r)` is drawn with probability
//! proportional to `exp(c / (r - l + 1))`, where `c` counts its tokens that
//! fall inside some gold entity, so spans that look like entities are drawn
//! more often while disjoint spans stay reachable.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{all_spans, Sentence};
use crate::rng::{stream_rng, tag};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub alpha: f64,
    pub entity_token_ratio: f64,
    /// `None` means spans of any length.
    pub max_span_len: Option<usize>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { alpha: 3.0, entity_token_ratio: 10.0, max_span_len: None, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NegativeCandidate {
    pub span: (usize, usize),
    pub overlap_count: usize,
    pub weight: f64,
}

pub fn enumerate_candidates(sentence: &Sentence, cfg: &SamplerConfig) -> Vec<NegativeCandidate> {
    let mut inside = vec![false; sentence.len()];
    for e in sentence.entities() {
        inside[e.start..=e.end].iter_mut().for_each(|f| *f = true);
    }
    all_spans(sentence, cfg.max_span_len)
        .into_iter()
        .filter(|&span| !sentence.is_gold_interval(span))
        .map(|(l, r)| {
            let overlap_count = inside[l..=r].iter().filter(|&&f| f).count();
            let len = (r - l + 1) as f64;
            NegativeCandidate { span: (l, r), overlap_count, weight: (overlap_count as f64 / len).exp() }
        })
        .collect()
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

pub fn budget_for(n: usize, entities: usize, available: usize, cfg: &SamplerConfig) -> usize {
    if available == 0 {
        return 0;
    }
    let raw = cfg.alpha * (n as f64 + cfg.entity_token_ratio * entities as f64);
    round_half_up(raw).clamp(1, available)
}

pub fn negative_budget(sentence: &Sentence, cfg: &SamplerConfig) -> usize {
    let available = enumerate_candidates(sentence, cfg).len();
    budget_for(sentence.len(), sentence.entities().len(), available, cfg)
}

/// Sequential proportional-to-weight draws with removal. Returns indices
/// into `weights` in draw order.
pub fn weighted_draw_without_replacement<R: Rng>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut out = Vec::with_capacity(k.min(weights.len()));
    while out.len() < k && !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut u = rng.random::<f64>() * total;
        // The last remaining index absorbs floating-point slack.
        let mut pick = remaining.len() - 1;
        for (slot, &i) in remaining.iter().enumerate() {
            if u < weights[i] {
                pick = slot;
                break;
            }
            u -= weights[i];
        }
        out.push(remaining.remove(pick));
    }
    out
}

/// Negatives for sentence `sentence_id` in `epoch`. The random stream depends
/// only on `(cfg.seed, sentence_id, epoch)`.
pub fn sample_negatives(sentence: &Sentence, sentence_id: usize, cfg: &SamplerConfig, epoch: usize) -> Vec<(usize, usize)> {
    let candidates = enumerate_candidates(sentence, cfg);
    let budget = budget_for(sentence.len(), sentence.entities().len(), candidates.len(), cfg);
    if budget >= candidates.len() {
        return candidates.into_iter().map(|c| c.span).collect();
    }
    let weights: Vec<f64> = candidates.iter().map(|c| c.weight).collect();
    let mut rng = stream_rng(cfg.seed, &[tag::NEGATIVES, sentence_id as u64, epoch as u64]);
    weighted_draw_without_replacement(&weights, budget, &mut rng)
        .into_iter()
        .map(|i| candidates[i].span)
        .collect()
}
