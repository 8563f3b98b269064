//! Masked-token pretraining on unlabeled sentences.
//!
//! A `mask_rate` fraction of the positions of each sentence is selected. Of
//! those, `keep_rate` keep their token, `random_rate` get a uniformly drawn
//! word, and the rest become the mask token. The loss is cross-entropy
//! against the original tokens at the selected positions.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{EncodedInput, LossTarget, TrainExample};
use super::optim::{AdamW, AdamWConfig};
use super::{EncoderError, ModelParams, Vocab};
use crate::corpus::Sentence;
use crate::rng::{derive_seed, stream_rng, tag};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlmConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_rate: f64,
    pub keep_rate: f64,
    pub random_rate: f64,
    pub seed: u64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 32,
            learning_rate: 1e-3,
            mask_rate: 0.15,
            keep_rate: 0.1,
            random_rate: 0.1,
            seed: 0,
        }
    }
}

/// Corrupts `ids` in place and returns the `(position, original id)`
/// targets. At least one position is always selected.
pub fn corrupt<R: Rng>(ids: &mut [u32], vocab: &Vocab, cfg: &MlmConfig, rng: &mut R) -> Result<Vec<(usize, u32)>, EncoderError> {
    let mask_id = vocab.mask_id().ok_or_else(|| EncoderError::MissingSpecial(vocab.mask_token().to_string()))?;
    let n = ids.len();
    let count = ((cfg.mask_rate * n as f64).round() as usize).clamp(1, n);
    let (lo, hi) = if vocab.len() > vocab.specials() { (vocab.specials(), vocab.len()) } else { (0, vocab.len()) };
    let mut targets: Vec<(usize, u32)> = index::sample(rng, n, count).into_iter().map(|p| (p, ids[p])).collect();
    targets.sort_unstable();
    for &(p, _) in &targets {
        let r: f64 = rng.random();
        if r < cfg.keep_rate {
            continue;
        } else if r < cfg.keep_rate + cfg.random_rate {
            ids[p] = rng.random_range(lo..hi) as u32;
        } else {
            ids[p] = mask_id;
        }
    }
    Ok(targets)
}

pub struct MlmOutcome {
    pub params: ModelParams,
    /// Mean batch loss of every step, in order.
    pub losses: Vec<f64>,
}

pub fn mlm_pretrain(params: ModelParams, sentences: &[Sentence], cfg: &MlmConfig) -> Result<MlmOutcome, EncoderError> {
    if sentences.is_empty() {
        return Err(EncoderError::EmptyCorpus);
    }
    let vocab = params.config.vocab.clone();
    vocab.mask_id().ok_or_else(|| EncoderError::MissingSpecial(vocab.mask_token().to_string()))?;
    if cfg.steps == 0 {
        return Ok(MlmOutcome { params, losses: Vec::new() });
    }
    let max_len = params.config.max_len;
    let encoded: Vec<Vec<u32>> = sentences
        .iter()
        .map(|s| {
            let mut ids = params.encode_tokens(s.tokens());
            ids.truncate(max_len);
            ids
        })
        .collect();

    let opt_cfg = AdamWConfig { learning_rate: cfg.learning_rate, ..Default::default() };
    let mut opt = AdamW::new(&params, opt_cfg, cfg.steps);
    let mut params = params;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = stream_rng(cfg.seed, &[tag::MLM, step as u64]);
        let batch = (0..cfg.batch_size.max(1))
            .map(|_| {
                let mut ids = encoded[rng.random_range(0..encoded.len())].clone();
                let targets = corrupt(&mut ids, &vocab, cfg, &mut rng)?;
                Ok(TrainExample {
                    input: EncodedInput { ids, is_entity_pos: None, which_type_pos: None },
                    target: LossTarget::Mlm(targets),
                })
            })
            .collect::<Result<Vec<_>, EncoderError>>()?;
        let res = params.gradient(&batch, Some(derive_seed(cfg.seed, &[tag::MLM, step as u64, tag::DROPOUT])))?;
        losses.push(res.loss);
        opt.step(&mut params, &res.grad);
    }
    Ok(MlmOutcome { params, losses })
}
