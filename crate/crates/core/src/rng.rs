//! Seeded random streams.
//!
//! Every consumer of randomness in a training run gets its own ChaCha stream
//! derived from the run seed, so adding or removing one consumer (for example
//! the energy critic) never shifts the draws seen by the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named purposes for the per-run streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    PolicyInit = 1,
    TaskCriticInit = 2,
    EnergyCriticInit = 3,
    TaskValueInit = 4,
    EnergyValueInit = 5,
    EnvReset = 10,
    Exploration = 11,
    Replay = 12,
    UpdateNoise = 13,
    Minibatch = 14,
    Eval = 15,
    TaskCriticInit2 = 16,
    EnergyCriticInit2 = 17,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
