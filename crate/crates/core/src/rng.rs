//! Seed derivation. Every stochastic component gets its own ChaCha stream
//! derived from a master seed and a purpose tag, so adding a consumer never
//! shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = mix64(master);
    for b in tag.bytes() {
        h = mix64(h ^ u64::from(b));
    }
    mix64(h ^ index)
}

pub fn stream(master: u64, tag: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, tag, index))
}

/// Uniform draw in [0, 1) from a stateless hash of `(seed, key)`.
pub fn hashed_unit(seed: u64, key: u64) -> f64 {
    (mix64(seed ^ mix64(key)) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
