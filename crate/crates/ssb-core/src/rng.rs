//! Deterministic RNG streams. One root seed fans out into independent,
//! reproducible substreams keyed by purpose strings and indices, so adding a
//! consumer never shifts the draws of existing ones.
//!
//! Stream key = SHA-256(seed_le || part_0 || 0x1f || part_1 || 0x1f || ...),
//! truncated to the 32-byte ChaCha8 seed. The 0x1f separator keeps distinct
//! part lists from colliding by concatenation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Substream of `seed` identified by an ordered list of byte-string parts.
pub fn stream(seed: u64, parts: &[&[u8]]) -> StreamRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update(p);
        h.update([0x1f]);
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Substream keyed by a purpose label and an index (record id, sample id, ...).
pub fn stream_indexed(seed: u64, purpose: &str, index: u64) -> StreamRng {
    stream(seed, &[purpose.as_bytes(), &index.to_le_bytes()])
}
