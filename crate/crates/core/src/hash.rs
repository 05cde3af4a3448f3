//! Fixed, platform-independent 64-bit hashing.
//!
//! Shingles are hashed with XXH3-64 keyed by the pipeline seed. Per-index
//! hash families (MinHash coordinates, band re-hashing, generator seeds) use
//! the SplitMix64 finalizer, which is a bijection on `u64`.

use xxhash_rust::xxh3::xxh3_64_with_seed;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The `index`-th key of the SplitMix64 sequence started at `seed`.
#[inline]
pub fn derive_key(seed: u64, index: u64) -> u64 {
    mix64(seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

#[inline]
pub fn hash_bytes(bytes: &[u8], seed: u64) -> u64 {
    xxh3_64_with_seed(bytes, seed)
}

/// Order-sensitive hash of a run of 64-bit values.
pub fn hash_u64s(values: &[u64], seed: u64) -> u64 {
    let mut h = mix64(seed ^ (values.len() as u64));
    for &v in values {
        h = mix64(h ^ v).wrapping_add(GOLDEN_GAMMA);
    }
    h
}
