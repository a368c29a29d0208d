use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DsrlError, Result};

/// One environment step as stored for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    /// Raw actor action (with exploration).
    pub a: Vec<f64>,
    /// Rectified action that was executed.
    pub a_r: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// Prior draw behind the executed noise.
    pub omega0: Vec<f64>,
    /// Goal reached at `s_next`; bootstrapping stops here.
    pub done: bool,
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(DsrlError::Argument("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer { capacity, data: Vec::new(), cursor: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Overwrites the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Index of each draw, uniform with replacement over the filled slots.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.data.is_empty() {
            return Err(DsrlError::Argument("cannot sample an empty replay buffer".into()));
        }
        Ok((0..batch).map(|_| rng.gen_range(0..self.data.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self.sample_indices(batch, rng)?.into_iter().map(|i| &self.data[i]).collect())
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.data.get(i)
    }
}
