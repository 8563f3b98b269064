mod common;

use std::collections::BTreeMap;

use common::{memorize, random_sentence, tiny_model, typed};
use fffner::corpus::{Token, TypeInventory};
use fffner::episode::{Episode, EpisodeSpec};
use fffner::formulate::{FormulationVariant, Label};
use fffner::sampler::SamplerConfig;
use fffner::trainer::{build_epoch_dataset, train, TrainConfig};

fn episode() -> Episode {
    let types = TypeInventory::new(vec!["A".into(), "B".into(), "C".into()]).unwrap();
    let sentences = (0..4)
        .map(|i| random_sentence(i, 6).with_entities(vec![typed(0, 1, i as usize % 3), typed(4, 4, 2)]).unwrap())
        .collect();
    Episode { sentences, types, spec: EpisodeSpec { k_shots: 1, seed: 0, fold_id: 0 } }
}

#[test]
fn one_sentence_is_memorized() {
    let (s, preds, negatives) = memorize(0);
    assert_eq!(negatives.len(), 21 - 2);
    for p in preds {
        if s.is_gold_interval(p.span) {
            assert!(p.entity_prob >= 0.5, "{p:?}");
            let gold = s.entities().iter().find(|e| e.bounds() == p.span).unwrap();
            assert_eq!(p.type_id, gold.type_id);
        } else {
            assert!(negatives.contains(&p.span));
            assert!(p.entity_prob < 0.5, "{p:?}");
        }
    }
}

#[test]
fn every_gold_entity_appears_once_per_epoch() {
    let ep = episode();
    let mask = Token::new("<mask>").unwrap();
    let cfg = TrainConfig { sampler: SamplerConfig { alpha: 0.3, ..Default::default() }, ..Default::default() };
    for epoch in 0..5 {
        let mut seen: BTreeMap<(usize, (usize, usize)), usize> = BTreeMap::new();
        for inst in build_epoch_dataset(&ep, &cfg, epoch, &mask).unwrap() {
            if let Label::Positive(t) = inst.label {
                let gold = ep.sentences[inst.sentence_id].entities().iter().find(|e| e.bounds() == inst.span).unwrap();
                assert_eq!(gold.type_id, t);
                *seen.entry((inst.sentence_id, inst.span)).or_default() += 1;
            } else {
                assert!(!ep.sentences[inst.sentence_id].is_gold_interval(inst.span));
            }
        }
        assert_eq!(seen.len(), 8);
        assert!(seen.values().all(|&c| c == 1));
    }
}

#[test]
fn zero_epochs_return_the_input() {
    let p = tiny_model(1, 8, 3, false);
    let (q, stats) = train(&episode(), p.clone(), &TrainConfig { epochs: 0, ..Default::default() }).unwrap();
    assert_eq!(p, q);
    assert!(stats.epochs.is_empty());
}

#[test]
fn training_is_deterministic() {
    let p = tiny_model(2, 8, 3, false).with_dropout(0.1);
    let cfg = TrainConfig { epochs: 3, batch_size: 4, learning_rate: 1e-3, seed: 9, ..Default::default() };
    let (a, sa) = train(&episode(), p.clone(), &cfg).unwrap();
    let (b, sb) = train(&episode(), p.clone(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa.to_jsonl(), sb.to_jsonl());
    let (c, _) = train(&episode(), p, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn head_layout_must_suit_the_variant() {
    let cfg = TrainConfig { epochs: 1, variant: FormulationVariant::SpanTypeTogether, ..Default::default() };
    assert!(train(&episode(), tiny_model(1, 8, 3, false), &cfg).is_err());
    assert!(train(&episode(), tiny_model(1, 8, 4, false), &TrainConfig { epochs: 1, ..Default::default() }).is_err());
    assert!(train(&episode(), tiny_model(1, 8, 3, true), &cfg).is_ok());
}
