//! Independent, reproducible random streams per episode and purpose.
//!
//! Every stream is ChaCha8 keyed by the run seed, with the stream id derived
//! from the episode index and purpose. Channel draws therefore do not depend
//! on how many variates the policy or the solver consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Channel = 0,
    Selection = 1,
    Solver = 2,
}

pub fn episode_stream(seed: u64, episode: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode.wrapping_mul(4).wrapping_add(purpose as u64));
    rng
}
