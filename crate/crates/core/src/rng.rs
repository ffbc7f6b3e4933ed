//! Seeded random streams.
//!
//! Every source of randomness is derived from a user seed plus a purpose
//! label ("init", "noise", "data", ...), so independent concerns never share
//! a stream and reordering one does not perturb the others.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

/// FNV-1a over a byte string; used to fold labels into seeds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer. Good avalanche, used for lattice hashing and seed mixing.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn mix(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt))
}

/// Independent stream for `(seed, purpose)`.
pub fn substream(seed: u64, purpose: &str) -> StreamRng {
    StreamRng::seed_from_u64(mix(seed, fnv1a(purpose.as_bytes())))
}

/// Independent stream for `(seed, purpose, index)`, e.g. one per benchmark case.
pub fn indexed_substream(seed: u64, purpose: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(mix(mix(seed, fnv1a(purpose.as_bytes())), index))
}

pub fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

pub fn uniform(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| substream(7, "init").random()).collect();
        let mut r = substream(7, "init");
        let b: Vec<u64> = (0..4).map(|_| r.random()).collect();
        // each call above re-creates the stream, so compare first draws only
        assert_eq!(a[0], b[0]);
        let mut n = substream(7, "noise");
        assert_ne!(b[0], n.random::<u64>());
    }

    #[test]
    fn indexed_streams_differ_by_index() {
        let x: u64 = indexed_substream(1, "case", 0).random();
        let y: u64 = indexed_substream(1, "case", 1).random();
        assert_ne!(x, y);
    }
}
