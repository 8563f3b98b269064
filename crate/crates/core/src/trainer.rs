//! Fine-tuning loop.
//!
//! Each epoch rebuilds the training set: every gold entity of every episode
//! sentence as a positive instance, plus that epoch's freshly sampled
//! negatives, all shuffled into one stream and consumed in minibatches of
//! mean loss.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Token;
use crate::encoder::loss::head_loss;
use crate::encoder::optim::{grad_norm, AdamW, AdamWConfig};
use crate::encoder::{EncoderError, HeadOutput, LossTarget, ModelParams, TrainExample};
use crate::episode::Episode;
use crate::formulate::{formulate, FormulateError, FormulatedInstance, FormulationVariant, Label};
use crate::rng::{derive_seed, stream_rng, tag};
use crate::sampler::{sample_negatives, SamplerConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged (non-finite loss or gradient) at epoch {epoch}")]
    DivergedAtEpoch { epoch: usize },
    #[error("model heads do not match the episode: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Formulate(#[from] FormulateError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub variant: FormulationVariant,
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 2e-4,
            weight_decay: 0.01,
            seed: 0,
            variant: FormulationVariant::Fff,
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over positive instances.
    pub loss_pos: f64,
    /// Mean loss over negative instances.
    pub loss_neg: f64,
    /// Mean loss over all instances.
    pub loss: f64,
    pub positives: usize,
    pub negatives: usize,
    pub steps: usize,
    /// Mean gradient norm over the epoch's steps.
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub epochs: Vec<EpochStats>,
    pub wall_time_secs: f64,
    pub diverged_at: Option<usize>,
}

impl TrainStats {
    pub fn to_jsonl(&self) -> String {
        self.epochs.iter().map(|e| serde_json::to_string(e).expect("stats serialize") + "\n").collect()
    }
}

/// One epoch's instances, positives first per sentence, then shuffled by
/// `(cfg.seed, epoch)`.
pub fn build_epoch_dataset(
    episode: &Episode,
    cfg: &TrainConfig,
    epoch: usize,
    mask: &Token,
) -> Result<Vec<FormulatedInstance>, FormulateError> {
    let mut out = Vec::new();
    for (sid, sentence) in episode.sentences.iter().enumerate() {
        for e in sentence.entities() {
            let mut inst = formulate(sentence, e.bounds(), cfg.variant, mask)?;
            inst.label = Label::Positive(e.type_id);
            inst.sentence_id = sid;
            out.push(inst);
        }
        for span in sample_negatives(sentence, sid, &cfg.sampler, epoch) {
            let mut inst = formulate(sentence, span, cfg.variant, mask)?;
            inst.sentence_id = sid;
            out.push(inst);
        }
    }
    out.shuffle(&mut stream_rng(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
    Ok(out)
}

pub fn loss_target(variant: FormulationVariant, label: Label) -> LossTarget {
    if variant.joint_type_head() {
        LossTarget::Joint(label)
    } else {
        LossTarget::Split(label)
    }
}

/// Per-instance loss of a head output under the variant's loss.
pub fn loss(output: &HeadOutput, label: Label, variant: FormulationVariant) -> Result<f64, EncoderError> {
    head_loss(output, label, variant.joint_type_head()).map(|(l, _)| l)
}

fn check_compatible(episode: &Episode, params: &ModelParams, variant: FormulationVariant) -> Result<(), TrainError> {
    if params.config.type_count != episode.types.len() {
        return Err(TrainError::Incompatible(format!(
            "model has {} types, episode has {}",
            params.config.type_count,
            episode.types.len()
        )));
    }
    if params.config.joint_none_class != variant.joint_type_head() {
        return Err(TrainError::Incompatible(format!("head layout does not suit variant {variant}")));
    }
    Ok(())
}

pub fn train(episode: &Episode, params: ModelParams, cfg: &TrainConfig) -> Result<(ModelParams, TrainStats), TrainError> {
    check_compatible(episode, &params, cfg.variant)?;
    let started = Instant::now();
    let mut stats = TrainStats::default();
    if cfg.epochs == 0 {
        return Ok((params, stats));
    }
    let mask = Token::new(params.config.vocab.mask_token())
        .map_err(|e| TrainError::Encoder(EncoderError::Config(e.to_string())))?;
    let batch_size = cfg.batch_size.max(1);

    let first = build_epoch_dataset(episode, cfg, 0, &mask)?;
    let steps_per_epoch = first.len().div_ceil(batch_size);
    let opt_cfg = AdamWConfig { learning_rate: cfg.learning_rate, weight_decay: cfg.weight_decay, ..Default::default() };
    let mut opt = AdamW::new(&params, opt_cfg, steps_per_epoch * cfg.epochs);
    let mut params = params;
    let mut pending = Some(first);

    for epoch in 0..cfg.epochs {
        let instances = match pending.take() {
            Some(d) => d,
            None => build_epoch_dataset(episode, cfg, epoch, &mask)?,
        };
        let examples = instances
            .iter()
            .map(|inst| Ok(TrainExample { input: params.encode(inst)?, target: loss_target(cfg.variant, inst.label) }))
            .collect::<Result<Vec<_>, EncoderError>>()?;

        let (mut sum_pos, mut sum_neg, mut n_pos, mut n_neg) = (0.0, 0.0, 0, 0);
        let mut norm_sum = 0.0;
        let mut steps = 0;
        for (step, (batch, insts)) in examples.chunks(batch_size).zip(instances.chunks(batch_size)).enumerate() {
            let dropout_seed = derive_seed(cfg.seed, &[tag::DROPOUT, epoch as u64, step as u64]);
            let res = match params.gradient(batch, Some(dropout_seed)) {
                Ok(r) => r,
                Err(EncoderError::NonFinite(_)) => {
                    stats.diverged_at = Some(epoch);
                    return Err(TrainError::DivergedAtEpoch { epoch });
                }
                Err(e) => return Err(e.into()),
            };
            for (l, inst) in res.per_example.iter().zip(insts) {
                if inst.label.is_positive() {
                    sum_pos += l;
                    n_pos += 1;
                } else {
                    sum_neg += l;
                    n_neg += 1;
                }
            }
            norm_sum += grad_norm(&res.grad);
            steps += 1;
            opt.step(&mut params, &res.grad);
        }
        if !params.is_finite() {
            return Err(TrainError::DivergedAtEpoch { epoch });
        }
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        stats.epochs.push(EpochStats {
            epoch,
            loss_pos: mean(sum_pos, n_pos),
            loss_neg: mean(sum_neg, n_neg),
            loss: mean(sum_pos + sum_neg, n_pos + n_neg),
            positives: n_pos,
            negatives: n_neg,
            steps,
            grad_norm: mean(norm_sum, steps),
        });
    }
    stats.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((params, stats))
}
