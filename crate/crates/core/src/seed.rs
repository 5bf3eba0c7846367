//! Stable seed derivation.
//!
//! Every random stream is keyed by `(global seed, stage name, item key)` so that
//! results never depend on processing order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

/// Derives a 64-bit seed from the global seed, a stage label and a per-item key.
pub fn derive_seed(seed: u64, stage: &str, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((stage.len() as u64).to_le_bytes());
    hasher.update(stage.as_bytes());
    hasher.update((key.len() as u64).to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stage_rng(seed: u64, stage: &str, key: &str) -> StageRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stage, key))
}
