//! Seed derivation. Every random draw in the crate comes from a stream keyed by
//! a master seed and a path of integers, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream tags used as the first path element.
pub mod tag {
    pub const CALIBRATION: u64 = 1;
    pub const EVALUATION: u64 = 2;
    pub const PANEL: u64 = 3;
    pub const SHARED: u64 = 4;
    pub const SERVER: u64 = 5;
    pub const AUX: u64 = 6;
    pub const NULL_EVAL: u64 = 7;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ 0x5151_aa77_0f0f_3c3c);
    for (i, &p) in path.iter().enumerate() {
        h = splitmix(h ^ splitmix(p.wrapping_add((i as u64 + 1) << 56)));
    }
    h
}

pub fn stream(seed: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}
