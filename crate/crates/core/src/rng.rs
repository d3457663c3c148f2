//! Every random draw in the crate goes through a seeded xoshiro256++ stream,
//! so a run is reproducible from its seed alone.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// `seed_from_u64` expands the seed with SplitMix64.
pub fn seeded(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Independent stream for a named purpose, derived from a base seed.
pub fn derived(seed: u64, stream: u64) -> Rng {
    seeded(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
