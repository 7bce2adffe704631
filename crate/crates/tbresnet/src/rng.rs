//! Seed management.
//!
//! Every random quantity in a run is drawn from a named substream of a single
//! user-facing seed. Substreams keep reruns bit-identical and make the draws
//! of one consumer (say, mini-batch shuffling) independent of whether another
//! consumer (weight init, attack noise) ran before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_SPLIT: &str = "split";
pub const STREAM_INIT: &str = "init";
pub const STREAM_BATCH: &str = "batch";
pub const STREAM_DCM_BATCH: &str = "dcm-batch";
pub const STREAM_ATTACK: &str = "attack";
pub const STREAM_GENERATE: &str = "generate";
pub const STREAM_RADEMACHER: &str = "rademacher";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// RNG for the named substream of `seed`.
pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    indexed_substream(seed, label, 0)
}

/// RNG for one member of an indexed substream family (Monte Carlo draws,
/// per-epsilon noise). Each index gets a stream that does not overlap with
/// any other index or label.
pub fn indexed_substream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(label.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    let mix = fnv1a(&key[0..24]);
    key[24..32].copy_from_slice(&mix.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
