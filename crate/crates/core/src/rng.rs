//! Seed plumbing. Every random draw in the crate comes from a ChaCha8 stream
//! derived from an explicit `u64` seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer; used to derive independent sub-seeds.
pub fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, streams: &[u64]) -> Rng {
    from_seed(derive_seed(seed, streams))
}

/// The seed [`derive`] would start its stream from.
pub fn derive_seed(seed: u64, streams: &[u64]) -> u64 {
    streams.iter().fold(seed, |s, &t| mix(s, t))
}
