//! Multi-domain sequential recommendation with compression-oriented user
//! encoding and domain-balanced training.
//!
//! Module map:
//! - [`corpus`]: interaction data, synthetic generation, JSONL ingestion,
//!   chronological splits and training sequences.
//! - [`textio`]: vocabulary, model inputs and target-domain masking.
//! - [`encoder`]: the trainable sequence encoder and its gradients.
//! - [`objective`]: scoring, negative sampling and the contrastive loss.
//! - [`balance`]: domain importance and the smoothed weight update.
//! - [`trainloop`]: optimization, early stopping and checkpoints.
//! - [`eval`]: full-ranking metrics and experiment harnesses.

pub mod balance;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod objective;
pub mod rng;
pub mod textio;
pub mod trainloop;

pub use error::{Error, Result};
