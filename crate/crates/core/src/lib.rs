//! Domain-adaptive masked-language-model pipeline for filing classification.
//!
//! The crate covers every stage from raw text to a results table:
//!
//! - [`tokenizer`]: WordPiece vocabulary training, encoding and fixed-length inputs.
//! - [`encoder`]: a small post-LN transformer encoder with MLM and classification
//!   heads, hand-written reverse-mode gradients and Adam.
//! - [`mlm`]: masked batches and the domain-adaptation pre-training loop.
//! - [`relevance`]: sentence segmentation, averaging sentence encoder and top-k
//!   excerpt selection against benchmark sentences.
//! - [`data`]: filings, score series, label derivation, dataset assembly, splits
//!   and descriptive statistics.
//! - [`baselines`]: common-class and multinomial Naive Bayes models.
//! - [`checkpoint`], [`metrics`], [`finetune`], [`config`]: persistence, evaluation,
//!   fine-tuning and the flat configuration file used by the `esglm` binary.
//! - [`synth`]: deterministic synthetic corpora and fixtures.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod finetune;
pub mod metrics;
pub mod mlm;
pub mod relevance;
pub mod synth;
pub mod tokenizer;

pub use error::{Error, Result};
