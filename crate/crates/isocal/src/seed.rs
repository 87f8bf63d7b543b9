//! Deterministic seed derivation.
//!
//! Experiments fan a single user-facing seed out to many independent RNG
//! streams (per trial, per owner, per noise setting). Streams are derived by
//! hashing the base seed together with a labeled path, so adding a new
//! consumer never perturbs existing streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `base` and a path of labeled components.
///
/// The label keeps unrelated uses of the same numeric path independent.
pub fn derive(base: u64, label: &str, path: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for part in path {
        h.update(part.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// A ChaCha stream seeded from a derived seed.
pub fn rng(base: u64, label: &str, path: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(base, label, path))
}
