//! Seeded random streams. Every consumer draws from its own ChaCha8 stream
//! so that adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers for the different consumers of randomness.
pub mod purpose {
    pub const COEFF_TIME: u64 = 1;
    pub const COEFF_SPACE: u64 = 2;
    pub const RHS: u64 = 3;
    pub const TEST_FUNCTION: u64 = 4;
    pub const SAMPLING: u64 = 5;
    pub const SYNTHETIC_SETS: u64 = 6;
    pub const ENERGY: u64 = 7;
}

/// Generator for `(seed, purpose)`.
pub fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

pub fn normal(rng: &mut impl rand::Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}
