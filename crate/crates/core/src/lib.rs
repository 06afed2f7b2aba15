//! Pool-based active learning for BIO sequence labeling with a linear-chain CRF.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: BIO tags, CoNLL-style I/O, statistics, splits, a synthetic generator
//! - [`features`]: sparse token-window features
//! - [`crf`]: inference (forward-backward, Viterbi) and penalized maximum-likelihood training
//! - [`strategies`]: uncertainty scores (LC, NLC, MTP, LTP) and the random baseline
//! - [`metrics`]: token/entity F1, sentence accuracy, entity distributions, sampling offsets
//! - [`active`]: the train, score, select, label loop and multi-seed experiments

pub mod active;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod features;
pub mod metrics;
pub mod strategies;

pub use error::{Error, Result};
