//! Seeded random streams.
//!
//! Every random consumer derives its generator from the experiment seed and a
//! fixed stream tag, so adding a consumer never perturbs the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const OOD_GAUSSIAN: u64 = 3;
    pub const OOD_UNIFORM: u64 = 4;
    pub const DISTORTION: u64 = 5;
    pub const SCORER_INIT: u64 = 6;
    pub const SCORER_SHUFFLE: u64 = 7;
    pub const SUBSET: u64 = 8;
    pub const COLORED_NOISE: u64 = 9;
}

pub fn stream(seed: u64, tag: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}
