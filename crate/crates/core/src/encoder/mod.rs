//! Span scoring model.
//!
//! [`SpanScorer`] is the contract the prediction code depends on: map a
//! formulated instance to is-entity and which-type logits. [`ModelParams`]
//! is the built-in implementation, a small pre-LN word-level transformer
//! with learned positions, trained with hand-written backpropagation.
//!
//! Batches are packed: the rows of every instance are stacked into one
//! matrix so that all per-token projections run as a single GEMM; only
//! attention is computed per instance.

mod kernels;
pub mod loss;
pub mod mlm;
mod model;
pub mod optim;
mod params;
mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulate::FormulatedInstance;

pub use model::{EncodedInput, GradientResult, LossTarget, TrainExample};
pub use params::{Layout, ModelParams, CHECKPOINT_MAGIC};
pub use vocab::{Vocab, PAD, UNK};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("instance of {len} tokens exceeds the positional capacity {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("slot position {pos} is outside an instance of {len} tokens")]
    PositionOutOfRange { pos: usize, len: usize },
    #[error("instance has no which-type slot")]
    MissingSlot,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("label does not fit the head layout: {0}")]
    LabelMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("pretraining corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary has no `{0}` token")]
    MissingSpecial(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab: Vocab,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub type_count: usize,
    /// Adds a trailing "no entity" class to the which-type head.
    pub joint_none_class: bool,
    pub ffn_mult: usize,
}

impl EncoderConfig {
    /// Desk-scale defaults: 64 wide, 2 layers, 4 heads, 128 positions.
    pub fn new(vocab: Vocab, type_count: usize) -> Self {
        Self {
            vocab,
            dim: 64,
            layers: 2,
            heads: 4,
            max_len: 128,
            dropout: 0.1,
            type_count,
            joint_none_class: false,
            ffn_mult: 4,
        }
    }

    pub fn type_head_width(&self) -> usize {
        self.type_count + usize::from(self.joint_none_class)
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::Config(m));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.type_count == 0 || self.max_len == 0 || self.ffn_mult == 0 {
            return bad("type_count, max_len and ffn_mult must be positive".into());
        }
        if self.vocab.mask_id().is_none() {
            return Err(EncoderError::MissingSpecial(self.vocab.mask_token().to_string()));
        }
        Ok(())
    }
}

/// Logits read at the two slot positions. `is_entity_logits` is ordered
/// `(entity, not-entity)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub is_entity_logits: Option<[f64; 2]>,
    pub which_type_logits: Vec<f64>,
}

pub trait SpanScorer: Sync {
    fn type_count(&self) -> usize;

    /// Longest instance the scorer accepts.
    fn max_len(&self) -> usize;

    fn mask_token(&self) -> &str;

    fn score_batch(&self, instances: &[FormulatedInstance]) -> Result<Vec<HeadOutput>, EncoderError>;
}
