//! Seed-stream derivation.
//!
//! Every source of randomness in an experiment is driven by one of five named
//! base seeds (data, init, selection, batching, profiles). Per-round and
//! per-client streams are derived from a base seed with a splitmix64 mix so
//! that varying one base seed never perturbs the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// The five independent seed streams of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub data: u64,
    pub init: u64,
    pub selection: u64,
    pub batching: u64,
    pub profiles: u64,
}

impl SeedSet {
    /// All five streams offset from a single master seed, kept distinct.
    pub fn from_master(master: u64) -> Self {
        SeedSet {
            data: derive(master, &[1]),
            init: derive(master, &[2]),
            selection: derive(master, &[3]),
            batching: derive(master, &[4]),
            profiles: derive(master, &[5]),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a sub-seed from `base` and a tag path (e.g. `[round, client]`).
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    let mut x = splitmix64(base);
    for &t in tags {
        x = splitmix64(x ^ splitmix64(t));
    }
    x
}

/// A deterministic RNG for the given seed.
pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
