//! Counter-based seed derivation.
//!
//! A master seed expands into independent streams keyed by
//! `(fold, iteration, purpose)`. Streams never share state, so adding a new
//! consumer does not perturb any existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Split = 1,
    InitPool = 2,
    Select = 3,
    Fit = 4,
    ReverseFit = 5,
    Synthetic = 6,
    Clustering = 7,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of words into a single 64-bit seed.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Seed for the `(fold, iteration, purpose)` stream of `master`.
pub fn derive(master: u64, fold: u64, iteration: u64, purpose: Purpose) -> u64 {
    mix(&[master, fold, iteration, purpose as u64])
}

/// A deterministic generator seeded from `seed`.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
