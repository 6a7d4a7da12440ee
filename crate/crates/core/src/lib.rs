//! Multi-agent grid-world Q-learning laboratory.
//!
//! Trains parameter-shared Double DQN agents on an L x L navigation task
//! across grid-size/density sweeps, logs per-episode stability statistics
//! (TD-error and gradient-norm variance), and builds CSR/stability phase
//! maps with instability-ridge extraction. The `orchestrator` module drives
//! full (L, rho, seed) sweeps and emits plot-ready CSV/JSON artifacts.

pub mod checkpoint;
pub mod gridworld;
pub mod learner;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod phase;
pub mod record;
pub mod replay;
pub mod seeding;

pub use gridworld::{Action, DoneReason, EnvState, GridConfig};
pub use learner::TrainerConfig;
pub use nn::{AdamState, GradientSet, NetParams};
pub use replay::{ReplayBuffer, Transition};
