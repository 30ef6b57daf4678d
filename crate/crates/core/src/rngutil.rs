//! Deterministic seed derivation.
//!
//! Every stochastic component draws from a `ChaCha8Rng` whose seed is derived
//! from the run seed plus a fixed stream tag, so that independent components
//! never share a stream and reruns are bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of stream tags into a new seed.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix(seed);
    for &p in parts {
        acc = splitmix(acc ^ splitmix(p.wrapping_add(0x1234_5678_9abc_def1)));
    }
    acc
}

/// Derives a fresh RNG for the given stream.
pub fn rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, parts))
}

/// Maps a hash to a uniform value in [0, 1).
pub fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}
