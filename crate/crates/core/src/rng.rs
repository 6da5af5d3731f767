//! Seeded random streams.
//!
//! Every random draw in a run comes from a stream derived from the root seed
//! plus a path of labels (round, particle, purpose), so results do not depend
//! on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Stream purposes, mixed into the derivation path.
pub mod purpose {
    pub const EXTEND: u64 = 1;
    pub const LOOKAHEAD: u64 = 2;
    pub const REFINE: u64 = 3;
    pub const RESAMPLE: u64 = 4;
}

/// Derives an independent stream from `seed` and a label path.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for label in path {
        hasher.update(label.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
