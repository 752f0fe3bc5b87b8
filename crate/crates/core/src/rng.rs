//! Seed derivation and the crate-wide RNG type.
//!
//! Every stochastic stage takes a `u64` seed. Child seeds are derived with a
//! SplitMix64-style mixer so that `(parent, stream)` pairs map to well spread,
//! platform independent values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of child stream `stream` from `parent`.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    mix64(
        parent
            .wrapping_add(GOLDEN_GAMMA)
            .wrapping_add(mix64(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))),
    )
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
