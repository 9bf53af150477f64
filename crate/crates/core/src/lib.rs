//! Test-time correction of classifier outputs with a Laplacian-regularized
//! likelihood objective, plus the stream simulator and evaluation harness used
//! to study it against network-adaptation baselines.

pub mod affinity;
pub mod error;
pub mod harness;
pub mod mapping;
pub mod numerics;
pub mod solver;
pub mod streams;
pub mod toy;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for one purpose (`salt`) under a run seed.
pub(crate) fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}
