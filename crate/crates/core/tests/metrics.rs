mod common;

use common::oracles::{brute_counts, gen_sentence};
use fffner::corpus::{Sentence, TypedSpan};
use fffner::eval::{aggregate, compare, paired_t_test, permutation_test, span_f1, FoldReport, SignificanceTest};
use fffner::predict::SentencePrediction;
use fffner::rng::stream_rng;
use proptest::prelude::*;
use rand::Rng;

/// Gold sentences plus predictions that keep, retype, shift or invent spans.
fn gen_case(seed: u64) -> (Vec<Sentence>, Vec<Vec<TypedSpan>>) {
    let mut rng = stream_rng(seed, &[]);
    let count = rng.random_range(1..8);
    let gold: Vec<Sentence> = (0..count).map(|_| gen_sentence(&mut rng, 12, 3)).collect();
    let preds = gold
        .iter()
        .map(|s| {
            let mut out: Vec<TypedSpan> = Vec::new();
            for e in s.entities() {
                match rng.random_range(0..4) {
                    0 => out.push(*e),
                    1 => out.push(TypedSpan::new(e.start, e.end, (e.type_id + 1) % 3)),
                    2 if e.end + 1 < s.len() => out.push(TypedSpan::new(e.start, e.end + 1, e.type_id)),
                    _ => {}
                }
            }
            if rng.random_bool(0.3) {
                let l = rng.random_range(0..s.len());
                if out.iter().all(|p| p.start != l || p.end != l) {
                    out.push(TypedSpan::new(l, l, rng.random_range(0..3)));
                }
            }
            out
        })
        .collect();
    (gold, preds)
}

fn records(preds: &[Vec<TypedSpan>]) -> Vec<SentencePrediction> {
    preds.iter().enumerate().map(|(i, e)| SentencePrediction { sentence_id: i, entities: e.clone() }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn span_f1_matches_set_intersection(seed in any::<u64>()) {
        let (gold, preds) = gen_case(seed);
        let r = span_f1(0, &gold, &records(&preds)).unwrap();
        let (c, g, p) = brute_counts(&gold, &preds);
        prop_assert_eq!((r.correct, r.gold, r.predicted), (c, g, p));
        let precision = if p == 0 { 0.0 } else { c as f64 / p as f64 };
        let recall = if g == 0 { 0.0 } else { c as f64 / g as f64 };
        prop_assert_eq!(r.precision, precision);
        prop_assert_eq!(r.recall, recall);
        let f1 = if g + p == 0 { 0.0 } else { 2.0 * c as f64 / (g + p) as f64 };
        prop_assert!((r.f1 - f1).abs() < 1e-12);
    }

    #[test]
    fn doubling_the_corpus_keeps_the_scores(seed in any::<u64>()) {
        let (gold, preds) = gen_case(seed);
        let once = span_f1(0, &gold, &records(&preds)).unwrap();
        let gold2: Vec<Sentence> = gold.iter().chain(&gold).cloned().collect();
        let preds2: Vec<Vec<TypedSpan>> = preds.iter().chain(&preds).cloned().collect();
        let twice = span_f1(0, &gold2, &records(&preds2)).unwrap();
        prop_assert_eq!(twice.correct, 2 * once.correct);
        prop_assert!((twice.f1 - once.f1).abs() < 1e-12);
        prop_assert!((twice.precision - once.precision).abs() < 1e-12);
    }

    #[test]
    fn aggregate_shifts_with_the_folds(f1s in prop::collection::vec(0.0f64..1.0, 2..12), shift in -0.5f64..0.5) {
        let report = |xs: &[f64]| {
            let folds: Vec<FoldReport> = xs
                .iter()
                .enumerate()
                .map(|(i, &f1)| FoldReport { fold_id: i as u32, precision: f1, recall: f1, f1, gold: 1, predicted: 1, correct: 1 })
                .collect();
            aggregate(&folds).unwrap()
        };
        let a = report(&f1s);
        let b = report(&f1s.iter().map(|x| x + shift).collect::<Vec<_>>());
        prop_assert!((b.mean_f1 - a.mean_f1 - shift).abs() < 1e-9);
        prop_assert!((b.std_f1.unwrap() - a.std_f1.unwrap()).abs() < 1e-9);
    }
}

#[test]
fn hand_case_half() {
    let gold = vec![Sentence::from_words("a b c d")
        .unwrap()
        .with_entities(vec![TypedSpan::new(0, 0, 0), TypedSpan::new(2, 3, 1)])
        .unwrap()];
    let preds = vec![vec![TypedSpan::new(0, 0, 0), TypedSpan::new(2, 2, 1)]];
    let r = span_f1(0, &gold, &records(&preds)).unwrap();
    assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
}

#[test]
fn t_and_permutation_tests_agree_on_clear_cases() {
    let big = [0.08, 0.11, 0.09, 0.12, 0.1, 0.07, 0.13, 0.1, 0.09, 0.11];
    let noise = [0.02, -0.03, 0.01, -0.01, 0.03, -0.02, 0.0, 0.01, -0.02, 0.01];
    assert!(paired_t_test(&big) < 0.01 && permutation_test(&big, 0, 0) < 0.01);
    assert!(paired_t_test(&noise) > 0.5 && permutation_test(&noise, 0, 0) > 0.5);
    // Only the two all-same-sign assignments reach an all-positive mean.
    assert_eq!(permutation_test(&big, 0, 0), 2.0 / 1024.0);
}

#[test]
fn permutation_monte_carlo_tracks_exact() {
    let mut rng = stream_rng(3, &[]);
    let diffs: Vec<f64> = (0..16).map(|_| rng.random_range(-0.05..0.1)).collect();
    let exact = permutation_test(&diffs, 0, 0);
    let mut longer = diffs.clone();
    longer.push(0.0);
    // n = 17 switches to sampling; a zero difference does not move the statistic.
    let sampled = permutation_test(&longer, 200_000, 9);
    assert!((exact - sampled).abs() < 0.01, "{exact} vs {sampled}");
}

#[test]
fn compare_reports_fold_matched_differences() {
    let mk = |xs: &[f64]| {
        let folds: Vec<FoldReport> = xs
            .iter()
            .enumerate()
            .map(|(i, &f1)| FoldReport { fold_id: i as u32, precision: f1, recall: f1, f1, gold: 1, predicted: 1, correct: 1 })
            .collect();
        aggregate(&folds).unwrap()
    };
    let a = mk(&[0.6, 0.62, 0.58, 0.61, 0.63]);
    let b = mk(&[0.5, 0.51, 0.5, 0.49, 0.52]);
    let c = compare(&a, &b, SignificanceTest::PairedT).unwrap();
    assert!((c.mean_difference - 0.104).abs() < 1e-9);
    assert!(c.significant(0.05));
}
