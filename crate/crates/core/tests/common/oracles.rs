//! Independent reference implementations used by property tests and the
//! acceptance run.

use std::collections::BTreeSet;

use fffner::corpus::{Sentence, Token, TypedSpan};
use fffner::predict::SpanPrediction;
use rand::Rng;

/// Words for generated sentences, including markup lookalikes and escaped
/// forms that the linear formats have to survive.
pub const POOL: &[&str] = &[
    "the", "a", "river", "Paris", "Ann", "x", "42", "é", "日本", "[", "]", "|", "\\[", "\\|", "\\\\]", "O", "B-PER", "-",
];

/// A random sentence of 1..=max_n tokens with random disjoint entities.
pub fn gen_sentence<R: Rng>(rng: &mut R, max_n: usize, types: usize) -> Sentence {
    let n = rng.random_range(1..=max_n);
    let tokens: Vec<Token> = (0..n).map(|_| Token::new(POOL[rng.random_range(0..POOL.len())]).unwrap()).collect();
    let mut entities = Vec::new();
    let mut i = 0;
    while i < n {
        if rng.random_bool(0.3) {
            let len = rng.random_range(1..=3).min(n - i);
            entities.push(TypedSpan::new(i, i + len - 1, rng.random_range(0..types)));
            i += len;
        } else {
            i += 1;
        }
    }
    Sentence::new(tokens, entities).unwrap()
}

/// Every `(l, r)` with `l <= r < n`, by explicit double loop.
pub fn every_span(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for l in 0..n {
        for r in l..n {
            out.push((l, r));
        }
    }
    out
}

/// Negative budget computed from scratch: count non-gold spans, then apply
/// the half-up rounded formula and the caps.
pub fn brute_budget(s: &Sentence, alpha: f64, ratio: f64) -> usize {
    let gold: BTreeSet<(usize, usize)> = s.entities().iter().map(|e| (e.start, e.end)).collect();
    let available = every_span(s.len()).into_iter().filter(|sp| !gold.contains(sp)).count();
    if available == 0 {
        return 0;
    }
    let raw = alpha * (s.len() as f64 + ratio * s.entities().len() as f64);
    let rounded = (raw + 0.5).floor() as usize;
    rounded.max(1).min(available)
}

/// Exact first-draw probabilities over the non-gold spans of `s`.
pub fn first_draw_probs(s: &Sentence) -> Vec<((usize, usize), f64)> {
    let gold: BTreeSet<(usize, usize)> = s.entities().iter().map(|e| (e.start, e.end)).collect();
    let weights: Vec<((usize, usize), f64)> = every_span(s.len())
        .into_iter()
        .filter(|sp| !gold.contains(sp))
        .map(|(l, r)| {
            let c = (l..=r).filter(|&i| s.entities().iter().any(|e| e.start <= i && i <= e.end)).count();
            ((l, r), (c as f64 / (r - l + 1) as f64).exp())
        })
        .collect();
    let total: f64 = weights.iter().map(|w| w.1).sum();
    weights.into_iter().map(|(sp, w)| (sp, w / total)).collect()
}

fn beats(a: &SpanPrediction, b: &SpanPrediction) -> bool {
    if a.entity_prob != b.entity_prob {
        return a.entity_prob > b.entity_prob;
    }
    if a.span.0 != b.span.0 {
        return a.span.0 < b.span.0;
    }
    let (la, lb) = (a.span.1 - a.span.0, b.span.1 - b.span.0);
    if la != lb {
        return la < lb;
    }
    a.type_id < b.type_id
}

/// Repeatedly keep the best remaining candidate and delete everything that
/// overlaps it.
pub fn delete_overlaps(preds: &[SpanPrediction]) -> Vec<TypedSpan> {
    let mut pool: Vec<SpanPrediction> = preds.iter().copied().filter(|p| p.entity_prob >= 0.5).collect();
    let mut kept = Vec::new();
    while !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            if beats(&pool[i], &pool[best]) {
                best = i;
            }
        }
        let b = pool[best];
        kept.push(TypedSpan::new(b.span.0, b.span.1, b.type_id));
        pool.retain(|p| p.span.1 < b.span.0 || b.span.1 < p.span.0);
    }
    kept.sort();
    kept
}

/// `(correct, gold, predicted)` by set intersection over
/// `(sentence, start, end, type)` tuples.
pub fn brute_counts(gold: &[Sentence], preds: &[Vec<TypedSpan>]) -> (usize, usize, usize) {
    let tuples = |sets: Vec<&[TypedSpan]>| -> BTreeSet<(usize, usize, usize, usize)> {
        sets.iter()
            .enumerate()
            .flat_map(|(i, es)| es.iter().map(move |e| (i, e.start, e.end, e.type_id)))
            .collect()
    };
    let g = tuples(gold.iter().map(|s| s.entities()).collect());
    let p = tuples(preds.iter().map(|v| v.as_slice()).collect());
    (g.intersection(&p).count(), g.len(), p.len())
}

/// Random predictions for a sentence of length `n`: distinct spans, some
/// of them tied on probability.
pub fn gen_predictions<R: Rng>(rng: &mut R, n: usize, k: usize, types: usize) -> Vec<SpanPrediction> {
    let levels = [0.3, 0.5, 0.6, 0.75, 0.9, 1.0];
    let mut spans = every_span(n);
    let mut out = Vec::new();
    while out.len() < k && !spans.is_empty() {
        let span = spans.swap_remove(rng.random_range(0..spans.len()));
        let entity_prob = if rng.random_bool(0.5) { levels[rng.random_range(0..levels.len())] } else { rng.random() };
        let type_id = rng.random_range(0..types);
        out.push(SpanPrediction { span, entity_prob, type_id, type_prob: 1.0 });
        if out.len() < k && rng.random_bool(0.1) {
            out.push(SpanPrediction { span, entity_prob, type_id: (type_id + 1) % types, type_prob: 1.0 });
        }
    }
    out
}
