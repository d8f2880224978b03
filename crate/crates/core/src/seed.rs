//! Deterministic seed splitting.
//!
//! Every random stream in a run is derived from the master seed by hashing a
//! path of tags through splitmix64: `derive(master, &[purpose, iteration, episode])`.
//! Different paths give statistically independent streams, and the same path
//! always gives the same stream, regardless of evaluation order or threading.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a sub-seed from `master` and a path of tags.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &tag| {
        splitmix64(acc ^ splitmix64(tag))
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Purpose tags used in seed paths.
pub mod tag {
    pub const INIT_DESIGN: u64 = 1;
    pub const ACQUISITION: u64 = 2;
    pub const PERFORMANCE: u64 = 3;
    pub const ROBUSTNESS: u64 = 4;
    pub const HYPERPARAMS: u64 = 5;
    pub const TEST_BATTERY: u64 = 6;
    pub const VERIFY: u64 = 7;
}
