//! Explicitly seeded random streams.
//!
//! Every stochastic routine takes a `&mut Stream`. Independent work units
//! (replications, bootstrap resamples, imputations, chains) get their own
//! stream derived from a parent seed and an index path, so results do not
//! depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and an index path.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |acc, &i| mix(acc ^ mix(i.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, path: &[u64]) -> Stream {
    stream(derive_seed(seed, path))
}

/// Draw a fresh seed from an existing stream, for handing to sub-tasks.
pub fn fork(rng: &mut Stream) -> u64 {
    use rand::RngCore;
    rng.next_u64()
}
