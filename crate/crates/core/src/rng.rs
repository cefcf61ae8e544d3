//! Random number generation.
//!
//! Every run owns a single [`RunRng`], a xoshiro256++ generator whose 256-bit
//! state is expanded from a 64-bit seed with SplitMix64. Both algorithms are
//! fully specified and platform independent, so a seed reproduces the same
//! stream everywhere.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type RunRng = Xoshiro256PlusPlus;

/// Seeds the generator for a run.
pub fn run_rng(seed: u64) -> RunRng {
    RunRng::seed_from_u64(seed)
}

/// Derives an independent stream from `seed` for auxiliary draws
/// (iterate reservoir, held-out samples) so they never perturb the main stream.
pub fn derived_rng(seed: u64, stream: u64) -> RunRng {
    RunRng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
