//! Emotion recognition in context.
//!
//! A training and evaluation toolkit for person-level emotion recognition
//! that fuses body-crop features with whole-scene context features. The
//! crate covers the full loop: dataset ingestion and preprocessing, a
//! two-branch convolutional model with a fusion head, the composite
//! training objective, ranking/regression metrics, dataset stylization for
//! photo-to-artwork domain adaptation, and a training/ablation harness.
//!
//! Data-parallel inner loops (batch convolution, per-person evaluation,
//! per-image stylization) run on rayon when the default `parallel` feature
//! is enabled and fall back to sequential loops otherwise. Results are
//! bitwise identical either way: work is written into index-addressed
//! slots and reduced in index order, never in arrival order.

pub mod ckpt;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod stylize;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive an independent RNG stream from a run seed and a purpose label.
/// Each `(seed, label)` pair gets its own stream, so adding or removing
/// one consumer never shifts the randomness another one sees.
pub fn seeded_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
