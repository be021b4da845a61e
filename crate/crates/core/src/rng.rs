//! Per-path random streams.
//!
//! Every simulated path draws from its own ChaCha stream selected by
//! `(seed, path_index)`, so results never depend on how paths are
//! scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type PathRng = ChaCha8Rng;

/// The random stream for path `path_index` under `seed`.
pub fn path_stream(seed: u64, path_index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// Derives an independent seed for a named sub-experiment.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
