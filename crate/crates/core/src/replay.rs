use std::collections::VecDeque;

use rand::Rng;

use crate::cmdp::Transition;
use crate::error::{Error, Result};

/// Bounded FIFO store of transitions. Single writer.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay.capacity", "must be at least 1"));
        }
        Ok(ReplayBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Append, evicting the oldest entry when full.
    pub fn push(&mut self, transition: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(transition);
    }

    pub fn extend(&mut self, transitions: impl IntoIterator<Item = Transition>) {
        for t in transitions {
            self.push(t);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Uniform sample without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if self.entries.is_empty() || batch > self.entries.len() {
            return Err(Error::InsufficientData(format!(
                "requested batch of {batch} from replay buffer holding {}",
                self.entries.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.entries.len(), batch)
            .into_iter()
            .map(|i| self.entries[i].clone())
            .collect())
    }
}
