//! Seed derivation. Every random stream is a ChaCha8 generator keyed by a
//! 64-bit seed, with independent purposes separated by the ChaCha stream id.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_MATRIX: u64 = 1;
pub const STREAM_SIGNAL: u64 = 2;
pub const STREAM_NOISE: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for child `index` of `master`: `splitmix64(master ^ splitmix64(index))`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
