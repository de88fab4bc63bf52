//! Named random substreams.
//!
//! Every consumer draws from its own generator derived from
//! `(seed, tag, step, index)`, so the values one consumer sees never depend
//! on whether or in which order the others ran.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ENSEMBLE_INIT: &str = "ensemble-init";
pub const PROCESS_NOISE: &str = "process-noise";
pub const OBSERVATION_NOISE: &str = "observation-noise";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Generator for substream `tag` at `(step, index)` under master `seed`.
pub fn substream(seed: u64, tag: &str, step: u64, index: u64) -> ChaCha8Rng {
    let mut key = splitmix64(seed);
    for part in [fnv1a(tag), step, index] {
        key = splitmix64(key ^ part);
    }
    ChaCha8Rng::seed_from_u64(key)
}
