//! Deterministic stand-in for a sentence encoder.
//!
//! A SHA-256 of `(seed, text)` seeds a ChaCha stream that is expanded into
//! Gaussian coordinates and L2-normalized. Equal texts map to equal vectors;
//! distinct texts are close to orthogonal for large widths.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::features::standard_normal;

/// Unit vector of length `width` for `text`; the zero vector for empty text.
pub fn fixture_embedding(text: &str, width: usize, seed: u64) -> Vec<f64> {
    if text.is_empty() {
        return vec![0.0; width];
    }
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(text.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut v: Vec<f64> = (0..width).map(|_| standard_normal(&mut rng)).collect();
    let norm = crate::linalg::l2_norm(&v);
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}
