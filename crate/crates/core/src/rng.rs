//! Seed handling and the uniform draws that fix the random number
//! consumption order.
//!
//! Replica `k` of a run with master seed `m` uses the seed
//! `splitmix64(m ^ (k * 0x9E3779B97F4A7C15))` (wrapping multiply) to seed a
//! xoshiro256++ generator via `seed_from_u64`. Uniforms are
//! `(next_u64 >> 11) * 2^-53`, which lies in `[0, 1)`.

use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SimRng = Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One output of the SplitMix64 generator whose state is `x` before the
/// increment.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_replica_seed(master_seed: u64, replica_index: u64) -> u64 {
    splitmix64(master_seed ^ replica_index.wrapping_mul(GOLDEN_GAMMA))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn replica_rng(master_seed: u64, replica_index: u64) -> SimRng {
    rng_from_seed(derive_replica_seed(master_seed, replica_index))
}

/// Uniform on `[0, 1)` with 53 random bits.
#[inline]
pub fn uniform(rng: &mut SimRng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}
