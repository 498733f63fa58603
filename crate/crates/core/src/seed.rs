//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! master seed mixed with a stream tag and an index, so streams never depend
//! on the order in which other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ tag) ^ index)
}

pub fn rng_for(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}

/// Stream tags. Values are arbitrary but fixed forever.
pub mod tags {
    pub const MODEL_INIT: u64 = 0x01;
    pub const SPACE_ENCODING: u64 = 0x02;
    pub const TIME_ENCODING: u64 = 0x03;
    pub const S1_PARAMS: u64 = 0x10;
    pub const KURAMOTO_PARAMS: u64 = 0x11;
    pub const SENSOR_MASKS: u64 = 0x12;
    pub const FIELD_NOISE: u64 = 0x13;
    pub const TRAIN_STEP: u64 = 0x20;
    pub const CORRUPTION: u64 = 0x21;
}
