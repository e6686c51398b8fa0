//! Deterministic seed streams.
//!
//! A single run seed fans out into independent substreams named by a short
//! purpose tag, so adding a new consumer of randomness never perturbs the
//! draws of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the seed bytes followed by the tag bytes.
pub(crate) fn derive(seed: u64, tag: &str) -> u64 {
    const OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET_BASIS;
    for byte in seed.to_le_bytes().iter().chain(tag.as_bytes()) {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// A generator seeded from the `(seed, tag)` substream.
pub(crate) fn rng(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}
