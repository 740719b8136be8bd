//! Deterministic named random substreams.
//!
//! Every random choice in the toolkit (k-means seeding, validation splits,
//! rank tie-breaking, bootstrap resampling, synthetic generation) draws from
//! a stream derived here, so one root seed fully determines a run and
//! substreams can be consumed in any order without interfering.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive the substream seed for `name` under `root`.
///
/// FNV-1a over the name, mixed with the root via splitmix64. The hash is
/// fixed here (not `DefaultHasher`) so seeds are stable across toolchains.
pub fn substream_seed(root: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(root ^ h).wrapping_add(h))
}

/// A ChaCha8 stream for the substream `name` under `root`.
pub fn substream(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(root, name))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
