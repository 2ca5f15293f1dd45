//! Keyed random streams.
//!
//! Every random draw in a run comes from a generator keyed by
//! `(seed, episode, step, purpose)`. Two runs that deploy the same policies
//! on the same seed therefore see identical trajectories, regardless of how
//! much randomness their planners consumed in between.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Transition = 1,
    Reward = 2,
    Planner = 3,
    Fit = 4,
    EnvBuild = 5,
    Lemma = 6,
    Policy = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_key(seed: u64, episode: u64, step: u64, purpose: Purpose) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ episode);
    h = splitmix64(h ^ step.rotate_left(17));
    splitmix64(h ^ (purpose as u64).rotate_left(41))
}

pub fn stream(seed: u64, episode: u64, step: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, episode, step, purpose))
}
