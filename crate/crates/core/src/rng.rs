//! Seed handling.
//!
//! Every random stream is a ChaCha8 generator seeded through
//! `SeedableRng::seed_from_u64`. Ensembles derive one seed per path with
//! [`split_seed`], so a path's realisation depends only on the master seed
//! and its index and never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of path `index` under `master`:
/// `splitmix64(master + GOLDEN * (index + 1))` with wrapping arithmetic.
pub fn split_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
