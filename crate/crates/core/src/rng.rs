//! Seed derivation and the named generator used everywhere in the crate.
//!
//! All randomness flows through [`Rng`] (ChaCha20) seeded either directly
//! from a `u64` or from a labelled derivation of a parent seed, so that any
//! sub-stream can be reproduced in isolation.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

pub use rand_chacha::ChaCha20Rng as Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from `parent`, a domain label and an index.
pub fn derive_seed(parent: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

pub fn derived_rng(parent: u64, label: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(parent, label, index))
}

pub fn standard_normal_f32(rng: &mut Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v as f32
        })
        .collect()
}

pub fn standard_normal_f64(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Hashes a string together with a seed into a `u64`.
pub fn hash_str(seed: u64, s: &str) -> u64 {
    derive_seed(seed, s, 0)
}
