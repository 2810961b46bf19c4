//! Seeding scheme shared by every sampler in the crate.
//!
//! All randomness comes from ChaCha8, a counter-based stream cipher with a
//! published specification, so a given `(inputs, seed)` pair reproduces the
//! same bytes on every platform. Experiment drivers fan a master seed out to
//! per-trial seeds with [`derive_seed`], which is one output step of the
//! SplitMix64 generator evaluated at the trial index: trial-level parallelism
//! therefore cannot change any trial's stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used by every sampler in this crate.
pub type Rng = ChaCha8Rng;

/// Builds the crate RNG from a bare `u64` seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for stream `stream` from a master seed.
///
/// Equals the `(stream + 1)`-th output of SplitMix64 seeded with `master`,
/// computed in O(1): the SplitMix64 state after k steps is
/// `master + k * gamma`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix_mix(master.wrapping_add(stream.wrapping_add(1).wrapping_mul(SPLITMIX_GAMMA)))
}
