//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit RNG. Independent units of work
//! (permutation replicas, overlap pairs, grid cells) draw from streams derived
//! from one master seed by index, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator family rooted at `seed`.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
