//! Deterministic RNG derivation. Every random stream in the engine is a
//! ChaCha8 generator keyed by the master seed plus a stage tag and optional
//! indices, so independent stages (and parallel jobs within a stage) never
//! share or race on a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_INIT: u64 = 0x01;
pub const TAG_TRAIN: u64 = 0x02;
pub const TAG_KMEANS: u64 = 0x03;
pub const TAG_GAP_REF: u64 = 0x04;
pub const TAG_GAP_REF_CLUSTER: u64 = 0x05;
pub const TAG_GAP_OBS: u64 = 0x06;

/// splitmix64 finalizer, the usual way to spread a small integer over 64 bits.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut s = mix(master);
    for &t in tags {
        s = mix(s ^ t);
    }
    s
}

pub fn derive_rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}
