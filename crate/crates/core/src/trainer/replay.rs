use std::sync::Arc;

use rand::Rng;

use crate::dynamics::ActionSet;
use crate::observation::Observation;

/// One stored experience `(s, a, r, s', done)`.
#[derive(Clone, Debug)]
pub struct Transition<T> {
    pub obs: Arc<Observation<T>>,
    pub action: usize,
    pub reward: T,
    pub next_obs: Arc<Observation<T>>,
    pub terminal: bool,
    /// Actions allowed in `next_obs`; masks the bootstrap argmax.
    pub next_legal: ActionSet,
}

/// Fixed-capacity FIFO ring with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    items: Vec<Transition<T>>,
    capacity: usize,
    /// Slot overwritten by the next push once full.
    head: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            head: 0,
        }
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

    pub fn push(&mut self, t: Transition<T>) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn get(&self, i: usize) -> &Transition<T> {
        &self.items[i]
    }

    /// Oldest item first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition<T>> {
        self.items[self.head..].iter().chain(&self.items[..self.head])
    }

    /// `n` storage indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.items.is_empty(), "cannot sample an empty buffer");
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}
