use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RlError;

/// One `(s, a, r, s', done)` step. `log_prob_old` is recorded by the acting
/// policy and only consumed by PPO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub log_prob_old: Option<f64>,
}

impl Transition {
    pub fn check(&self, state_dim: usize) -> Result<(), RlError> {
        for v in [&self.state, &self.next_state] {
            if v.len() != state_dim {
                return Err(RlError::DimensionMismatch {
                    expected: state_dim,
                    got: v.len(),
                });
            }
        }
        if let Some(lp) = self.log_prob_old {
            if !(lp <= 0.0) {
                return Err(RlError::InvalidConfig(format!(
                    "log_prob_old must be <= 0, got {lp}"
                )));
            }
        }
        Ok(())
    }
}

/// Fixed-capacity ring of transitions; oldest entries are evicted first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceBuffer<T = Transition> {
    capacity: usize,
    inserted: u64,
    items: VecDeque<T>,
}

impl<T> ExperienceBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            inserted: 0,
            items: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of pushes, including evicted entries.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn get(&self, index: usize) -> Option<&T> {
        self.items.get(index)
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    /// Uniform indices with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }
}
