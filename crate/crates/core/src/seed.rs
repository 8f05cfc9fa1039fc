//! Deterministic fan-out of a single global seed into per-module sub-seeds.
//!
//! `sub_seed(base, label)` hashes the label with FNV-1a and mixes it into the
//! base seed, so each module draws from an independent, reproducible stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn sub_seed(base: u64, label: &str) -> u64 {
    // splitmix-style finalizer over base ^ hash(label)
    let mut z = base ^ fnv1a(label);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn rng_for(base: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(base, label))
}
