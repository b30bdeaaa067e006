//! Deterministic per-stream random generators.
//!
//! Every stochastic draw in the simulator comes from a ChaCha stream keyed by
//! the scenario seed plus a tuple of tags (pose, orientation, beam, ...), so
//! results do not depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stream tags used across modules, kept distinct so that payload, noise and
/// scenario draws never share a stream.
pub mod tag {
    pub const PAYLOAD: u64 = 0x5041_594c;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const FRAME_NOISE: u64 = 0x4652_4d4e;
    pub const TRIAL: u64 = 0x5452_4941;
}
