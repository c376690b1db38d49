//! Offline decoding of acoustic speech features from ECoG-style recordings:
//! preprocessing, contamination audit, CNN/ViT encoders with a bidirectional
//! LSTM decoder, joint MSE + contrastive training, DTW augmentation,
//! cross-validation, metrics and saliency.

pub mod augment;
pub mod contamination;
pub mod corpus;
pub mod dataset;
mod error;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod sigproc;
pub mod training;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use error::{Error, Result};

/// Deterministic generator for `(seed, stream)`. Distinct streams are
/// independent.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
