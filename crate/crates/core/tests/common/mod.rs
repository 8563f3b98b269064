#![allow(dead_code)]

pub mod oracles;

use fffner::corpus::{Sentence, Token, TypedSpan};
use fffner::encoder::{EncodedInput, EncoderConfig, LossTarget, ModelParams, TrainExample, Vocab};
use fffner::formulate::{formulate, FormulationVariant, Label};
use fffner::rng::stream_rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const WORDS: &[&str] = &["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];

/// A dim-8 (or `dim`) one-layer model whose weights are scaled up from the
/// usual init so that every gradient entry is well away from zero.
pub fn tiny_model(seed: u64, dim: usize, types: usize, joint: bool) -> ModelParams {
    let s = Sentence::from_words(&WORDS.join(" ")).unwrap();
    let vocab = Vocab::build([&s], "<mask>");
    let mut cfg = EncoderConfig::new(vocab, types);
    cfg.dim = dim;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.max_len = 24;
    cfg.dropout = 0.0;
    cfg.joint_none_class = joint;
    let mut p = ModelParams::init(cfg, seed).unwrap();
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut rng = stream_rng(seed, &[99]);
    p.data.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
    p
}

pub fn random_sentence(seed: u64, n: usize) -> Sentence {
    let mut rng = stream_rng(seed, &[7]);
    let text: Vec<&str> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    Sentence::from_words(&text.join(" ")).unwrap()
}

pub fn span_example(p: &ModelParams, seed: u64, variant: FormulationVariant, label: Label) -> TrainExample {
    let s = random_sentence(seed, 5).with_entities(vec![]).unwrap();
    let mask = Token::new("<mask>").unwrap();
    let inst = formulate(&s, (1, 2), variant, &mask).unwrap();
    let target = if variant.joint_type_head() { LossTarget::Joint(label) } else { LossTarget::Split(label) };
    TrainExample { input: p.encode(&inst).unwrap(), target }
}

pub fn mlm_example(p: &ModelParams, seed: u64) -> TrainExample {
    let s = random_sentence(seed, 6);
    let ids = p.encode_tokens(s.tokens());
    let mut input = EncodedInput { ids: ids.clone(), is_entity_pos: None, which_type_pos: None };
    input.ids[2] = p.config.vocab.mask_id().unwrap();
    TrainExample { input, target: LossTarget::Mlm(vec![(2, ids[2]), (4, ids[4])]) }
}

/// Largest per-component relative error between the analytic gradient and
/// central differences of the eval-mode mean loss.
pub fn max_relative_error(p: &ModelParams, batch: &[TrainExample], step: f64) -> f64 {
    let analytic = p.gradient(batch, None).unwrap().grad;
    let mean = |q: &ModelParams| {
        let l = q.example_losses(batch, None).unwrap();
        l.iter().sum::<f64>() / l.len() as f64
    };
    let mut q = p.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p.data.len() {
        let orig = q.data[i];
        q.data[i] = orig + step;
        let up = mean(&q);
        q.data[i] = orig - step;
        let down = mean(&q);
        q.data[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs());
        if denom > 0.0 {
            worst = worst.max((a - numeric).abs() / denom.max(1e-6));
        }
    }
    worst
}

pub fn typed(start: usize, end: usize, t: usize) -> TypedSpan {
    TypedSpan::new(start, end, t)
}

/// The memorization setup: one sentence, every non-gold span a negative in
/// every epoch, 200 epochs.
pub fn memorize(seed: u64) -> (Sentence, Vec<fffner::predict::SpanPrediction>, std::collections::BTreeSet<(usize, usize)>) {
    use fffner::corpus::TypeInventory;
    use fffner::episode::{Episode, EpisodeSpec};
    use fffner::predict::{score_sentence, PredictConfig};
    use fffner::trainer::{build_epoch_dataset, train, TrainConfig};

    let types = TypeInventory::new(vec!["LOC".into(), "PER".into()]).unwrap();
    let s = Sentence::from_words("Tom lives in Los Angeles now")
        .unwrap()
        .with_entities(vec![typed(0, 0, 1), typed(3, 4, 0)])
        .unwrap();
    let ep = Episode { sentences: vec![s.clone()], types, spec: EpisodeSpec { k_shots: 1, seed, fold_id: 0 } };
    let mut cfg = EncoderConfig::new(Vocab::build([&s], "<mask>"), 2);
    cfg.dim = 16;
    cfg.max_len = 24;
    let params = ModelParams::init(cfg, seed).unwrap();
    let tc = TrainConfig { epochs: 200, learning_rate: 1e-3, seed, ..Default::default() };
    let mask = Token::new("<mask>").unwrap();
    let negatives = (0..tc.epochs)
        .flat_map(|e| build_epoch_dataset(&ep, &tc, e, &mask).unwrap())
        .filter(|i| !i.label.is_positive())
        .map(|i| i.span)
        .collect();
    let (trained, _) = train(&ep, params, &tc).unwrap();
    (s.clone(), score_sentence(&trained, &s, 0, &PredictConfig::default()).unwrap(), negatives)
}
