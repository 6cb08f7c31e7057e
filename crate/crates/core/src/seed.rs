//! Deterministic seed derivation. Every random stream in the crate is a
//! `ChaCha8Rng` seeded from a global seed mixed with stable salts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, salts: &[u64]) -> u64 {
    salts.iter().fold(mix(seed), |acc, &s| mix(acc ^ mix(s)))
}

/// FNV-1a, used to turn identifiers into salts.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn rng(seed: u64, salts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, salts))
}
