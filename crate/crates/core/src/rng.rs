//! Seeded substreams.
//!
//! Every stochastic routine in the crate draws from a ChaCha stream derived
//! from a user seed plus integer tags (observation index, iteration, repeat).
//! Results are therefore reproducible bit-for-bit for a fixed seed and do not
//! depend on thread scheduling: parallel loops derive one stream per task and
//! reduce in a fixed order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with tags into a new 64-bit seed.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(seed);
    for &t in tags {
        acc = splitmix64(acc ^ splitmix64(t.wrapping_add(0xd1b5_4a32_d192_ed03)));
    }
    acc
}

/// Independent stream for `(seed, tags)`.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}

// Tag constants; each call site combines one of these with loop indices.
pub const TAG_INIT: u64 = 1;
pub const TAG_CHAIN_INIT: u64 = 2;
pub const TAG_SWEEP: u64 = 3;
pub const TAG_GENERATE: u64 = 4;
pub const TAG_REPEAT: u64 = 5;
pub const TAG_RESTART: u64 = 6;
