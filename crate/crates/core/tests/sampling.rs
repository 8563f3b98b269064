mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::oracles::{brute_budget, first_draw_probs, gen_sentence};
use fffner::corpus::{Sentence, TypedSpan};
use fffner::rng::stream_rng;
use fffner::sampler::{budget_for, enumerate_candidates, negative_budget, sample_negatives, SamplerConfig};
use proptest::prelude::*;

fn arb_sentence() -> impl Strategy<Value = Sentence> {
    any::<u64>().prop_map(|seed| gen_sentence(&mut stream_rng(seed, &[]), 25, 3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn budget_matches_brute_force(s in arb_sentence(), alpha in prop::sample::select(vec![0.1, 0.5, 1.0, 2.5, 3.0, 5.0])) {
        let cfg = SamplerConfig { alpha, ..Default::default() };
        prop_assert_eq!(negative_budget(&s, &cfg), brute_budget(&s, alpha, 10.0));
    }

    #[test]
    fn draws_are_distinct_non_gold_and_budget_sized(s in arb_sentence(), alpha in 0.05f64..4.0, epoch in 0usize..50) {
        let cfg = SamplerConfig { alpha, seed: 11, ..Default::default() };
        let got = sample_negatives(&s, 0, &cfg, epoch);
        let set: BTreeSet<_> = got.iter().copied().collect();
        prop_assert_eq!(set.len(), got.len());
        prop_assert_eq!(got.len(), negative_budget(&s, &cfg));
        for span in got {
            prop_assert!(!s.is_gold_interval(span));
            prop_assert!(span.0 <= span.1 && span.1 < s.len());
        }
    }

    #[test]
    fn weights_stay_between_one_and_e(s in arb_sentence()) {
        for c in enumerate_candidates(&s, &SamplerConfig::default()) {
            prop_assert!(c.weight >= 1.0 && c.weight <= std::f64::consts::E);
            prop_assert!(c.overlap_count <= c.span.1 - c.span.0 + 1);
        }
    }

    /// Before the cap at the number of candidates, which can only shrink
    /// when an entity is added.
    #[test]
    fn budget_is_monotone_in_length_and_entities(n in 1usize..60, e in 0usize..6, alpha in 0.01f64..5.0) {
        let cfg = SamplerConfig { alpha, ..Default::default() };
        let room = usize::MAX;
        prop_assert!(budget_for(n, e, room, &cfg) <= budget_for(n + 1, e, room, &cfg));
        prop_assert!(budget_for(n, e, room, &cfg) <= budget_for(n, e + 1, room, &cfg));
    }
}

#[test]
fn first_draw_frequencies_follow_weights() {
    let s = Sentence::from_words("we flew to New York today").unwrap().with_entities(vec![TypedSpan::new(3, 4, 0)]).unwrap();
    // A budget of one makes every call a single first draw.
    let cfg = SamplerConfig { alpha: 0.05, seed: 5, ..Default::default() };
    assert_eq!(negative_budget(&s, &cfg), 1);
    let draws = 100_000;
    let mut hits: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for epoch in 0..draws {
        *hits.entry(sample_negatives(&s, 0, &cfg, epoch)[0]).or_default() += 1;
    }
    for (span, p) in first_draw_probs(&s) {
        let seen = hits.get(&span).copied().unwrap_or(0) as f64;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        assert!((seen - draws as f64 * p).abs() <= 3.0 * sd, "{span:?}: {seen} vs {}", draws as f64 * p);
    }
    assert_eq!(hits.keys().filter(|sp| **sp == (3, 4)).count(), 0);
}
