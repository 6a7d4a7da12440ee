//! Shared fixed-capacity experience buffer with uniform sampling and a
//! warm-up gate.

use rand::Rng;
use thiserror::Error;

/// Default ring capacity.
pub const CAPACITY: usize = 100_000;
/// Default number of stored transitions before updates may start.
pub const WARM_UP: usize = 1_500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("warm-up not reached: buffer holds {size} of {warm_up} transitions")]
    WarmupNotReached { size: usize, warm_up: usize },
}

/// One replay record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub agent_index: usize,
}

/// FIFO ring buffer shared by all agents of one run.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    storage: Vec<Transition>,
    capacity: usize,
    warm_up: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, warm_up: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self { storage: Vec::new(), capacity, warm_up, next: 0 }
    }

    /// Buffer with the standard training dimensions.
    pub fn standard() -> Self {
        Self::new(CAPACITY, WARM_UP)
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn warm_up(&self) -> usize {
        self.warm_up
    }

    pub fn is_warm(&self) -> bool {
        self.len() >= self.warm_up
    }

    /// Append, evicting the oldest element once full.
    pub fn push(&mut self, transition: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(transition);
        } else {
            self.storage[self.next] = transition;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform sample with replacement. Deterministic given the rng state.
    pub fn sample<'a, R: Rng>(
        &'a self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<&'a Transition>, ReplayError> {
        if !self.is_warm() {
            return Err(ReplayError::WarmupNotReached { size: self.len(), warm_up: self.warm_up });
        }
        Ok((0..batch_size).map(|_| &self.storage[rng.gen_range(0..self.storage.len())]).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }
}
