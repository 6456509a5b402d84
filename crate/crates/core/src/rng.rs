//! Counter-keyed random streams.
//!
//! Every stochastic draw in training is taken from a stream keyed by a tuple
//! such as `(run seed, epoch, batch, episode)`, so results do not depend on
//! which thread runs which episode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a key tuple into a single 64-bit seed.
pub fn mix(key: &[u64]) -> u64 {
    key.iter()
        .fold(0x6A09_E667_F3BC_C908, |h, &k| splitmix(h ^ splitmix(k)))
}

pub fn keyed(key: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(mix(key))
}

/// Stream domains, so that e.g. data generation and sampling never share a key.
pub mod domain {
    pub const SCENES: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SAMPLER: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const LABEL_ORDER: u64 = 5;
}
