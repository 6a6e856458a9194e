//! Seed derivation shared by every stochastic stage.
//!
//! Sub-seeds are derived by hashing the base seed with a stage tag and any
//! identifying parts, so the output of a stage never depends on the order in
//! which work items are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

/// Derive a child seed from `base`, a stage `tag` and identifying `parts`.
pub fn derive_seed(base: u64, tag: &str, parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

pub fn rng_from(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stage_rng(base: u64, tag: &str, parts: &[&[u8]]) -> StageRng {
    rng_from(derive_seed(base, tag, parts))
}
