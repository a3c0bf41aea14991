//! Named RNG substreams derived from one master seed.
//!
//! Every source of randomness in a run (environment resets, ε-greedy
//! exploration, hindsight goal selection, replay sampling, weight init)
//! draws from its own ChaCha stream of the master seed. Toggling one
//! component on or off therefore never perturbs the randomness any other
//! component sees.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate. ChaCha output is stable across
/// platforms, which keeps seeded runs byte-reproducible.
pub type Rng = ChaCha8Rng;

/// The independent randomness consumers of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Environment resets and goal sampling.
    Env = 0,
    /// ε-greedy action noise.
    Explore = 1,
    /// Hindsight goal index draws.
    Her = 2,
    /// Replay sampling (uniform and prioritized).
    Replay = 3,
    /// Network weight initialization.
    Init = 4,
    /// Greedy policy evaluation episodes.
    Eval = 5,
}

/// Returns the RNG for `stream` under `master_seed`.
pub fn stream(master_seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream as u64);
    rng
}
