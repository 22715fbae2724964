//! Seed derivation for the independent random streams (shuffles, flips,
//! synthetic tiles, initialisation).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_SHUFFLE: u64 = 0x5348_5546;
pub(crate) const STREAM_FLIP: u64 = 0x464c_4950;
pub(crate) const STREAM_SYNTH: u64 = 0x5359_4e54;
pub(crate) const STREAM_INIT: u64 = 0x494e_4954;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

pub(crate) fn rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream, index))
}
