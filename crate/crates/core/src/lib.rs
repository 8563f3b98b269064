//! Few-shot named entity recognition by span formulation.
//!
//! Every candidate span of a sentence is rendered as its own encoder input,
//! with the span bracketed and two mask slots inserted next to it. One slot
//! answers "is this an entity?", the other "which type?". Training mixes the
//! gold spans with negatives resampled every epoch; prediction scores every
//! span and keeps the most confident non-overlapping ones.
//!
//! Module map:
//!
//! - [`corpus`]: BIO parsing, sentences, typed spans, span enumeration
//! - [`episode`]: N-way K-shot support sets
//! - [`formulate`]: encoder input layouts and GENRE/TANL linearization
//! - [`sampler`]: negative-span budget and overlap-weighted sampling
//! - [`encoder`]: the scoring transformer, its gradients and MLM pretraining
//! - [`trainer`]: the fine-tuning loop
//! - [`predict`]: span scoring and greedy overlap resolution
//! - [`eval`]: span micro-F1, fold aggregation, significance
//! - [`synth`]: synthetic corpora for desk-scale experiments
//! - [`pipeline`]: end-to-end runs, sweeps and run manifests

pub mod corpus;
pub mod encoder;
pub mod episode;
pub mod eval;
pub mod formulate;
pub mod pipeline;
pub mod predict;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod trainer;
