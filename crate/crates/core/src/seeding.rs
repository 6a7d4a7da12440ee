//! Seed derivation for the per-run random streams.
//!
//! Every run (condition x seed) owns independent streams for the
//! environment, action selection, replay sampling, evaluation, and weight
//! initialization. All of them derive from one master seed so that a run
//! is reproducible regardless of how it is scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stateless SplitMix64 finalizer; used to fold fields into seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Master seed for one run, derived from the full condition identity so
/// that no two (L, rho, id flag, seed) runs share streams.
pub fn master_seed(side: usize, density: f64, id_enabled: bool, seed: u64) -> u64 {
    [side as u64, density.to_bits(), id_enabled as u64, seed]
        .into_iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, field| mix(acc ^ field))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    Env = 0,
    Action = 1,
    Replay = 2,
    Eval = 3,
    Init = 4,
}

/// One deterministic stream of the master seed.
pub fn stream_rng(master: u64, stream: StreamId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master ^ (stream as u64).wrapping_mul(0xA076_1D64_78BD_642F)))
}

/// The full set of streams a training run consumes.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub env: ChaCha8Rng,
    pub action: ChaCha8Rng,
    pub replay: ChaCha8Rng,
    pub eval: ChaCha8Rng,
    pub init: ChaCha8Rng,
}

impl RngStreams {
    pub fn from_master(master: u64) -> Self {
        Self {
            env: stream_rng(master, StreamId::Env),
            action: stream_rng(master, StreamId::Action),
            replay: stream_rng(master, StreamId::Replay),
            eval: stream_rng(master, StreamId::Eval),
            init: stream_rng(master, StreamId::Init),
        }
    }
}
