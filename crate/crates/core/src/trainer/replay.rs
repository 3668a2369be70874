use std::collections::VecDeque;

use rand::Rng;

use crate::mdp::Transition;

/// Bounded FIFO experience buffer with uniform sampling with replacement.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    buf: VecDeque<Transition>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, buf: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buf.iter()
    }

    pub fn sample<'a, R: Rng + ?Sized>(&'a self, n: usize, rng: &mut R) -> Vec<&'a Transition> {
        if self.buf.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.buf[rng.random_range(0..self.buf.len())]).collect()
    }
}
