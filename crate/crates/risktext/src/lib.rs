//! Weakly-supervised user-level text classification.
//!
//! The crate covers the full pipeline for assigning one of four ordered
//! risk levels to a user from the set of their posts:
//!
//! - [`corpus`] — data model, JSONL ingestion, stratified splitting,
//!   pseudo-label construction and mixing, synthetic corpus generation.
//! - [`preprocess`] — normalization, sentence segmentation, greedy passage
//!   chunking to a word budget, passage capping.
//! - [`views`] — perturbed "views" of a user (word/sentence masking,
//!   begin/end extraction, k-means summarization) for consistency training.
//! - [`encoder`] — a small trainable transformer encoder with mean-pooled
//!   user embeddings and a masked-language-model head, with hand-written
//!   backward passes.
//! - [`trainer`] — classification head, losses (cross-entropy, KL
//!   consistency, MLM), the training regimes, and prediction.
//! - [`metrics`] — confusion matrices, per-class and macro P/R/F1,
//!   risk-distribution summaries.
//!
//! Every sampling operation takes an explicit seed and is bit-reproducible
//! given identical inputs.

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod preprocess;
pub mod seed;
pub mod trainer;
pub mod views;

pub use error::{Error, Result};
