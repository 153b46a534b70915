//! Counter-based seed derivation.
//!
//! Every random stream in an experiment is keyed by a path of integers
//! (master seed, purpose tag, trial index, sample size, ...). The derived
//! seed is a SplitMix64 chain over that path, so any stream can be recreated
//! in isolation from the values recorded in the results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags that separate independent streams derived from one seed.
pub mod tag {
    pub const TRUTH: u64 = 0x7472_7574;
    pub const OFFSET: u64 = 0x6f66_6673;
    pub const DATA: u64 = 0x6461_7461;
    pub const SOURCE_DATA: u64 = 0x7372_6364;
    pub const COVARIATES: u64 = 0x636f_7661;
    pub const NOISE: u64 = 0x6e6f_6973;
    pub const PILOT: u64 = 0x7069_6c6f;
    pub const GP_PATH: u64 = 0x6770_7061;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seed for the stream identified by `path` under `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
