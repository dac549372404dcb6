//! Seeded random streams.
//!
//! Every random quantity is drawn from ChaCha8 seeded with a SplitMix64
//! mix of `(seed, stream)`, so results depend only on the seed and the
//! stream index, never on the platform or on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0x5EED)))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}
