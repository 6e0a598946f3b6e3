use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

impl Experience {
    pub fn new(state: Vec<f64>, action: Vec<f64>, reward: f64, next_state: Vec<f64>) -> Result<Self> {
        if state.len() != next_state.len() {
            return Err(Error::input(format!(
                "state has {} entries but next state has {}",
                state.len(),
                next_state.len()
            )));
        }
        let finite = state.iter().chain(&action).chain(&next_state).all(|v| v.is_finite()) && reward.is_finite();
        if !finite {
            return Err(Error::input("experience contains non-finite values"));
        }
        Ok(Self {
            state,
            action,
            reward,
            next_state,
        })
    }
}

/// Fixed-capacity ring of transitions; once full, each push overwrites the
/// oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Experience>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::input("replay buffer capacity must be positive"));
        }
        Ok(Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, exp: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(exp);
        } else {
            self.items[self.cursor] = exp;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Contents from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Experience> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `k` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::State("sampling from an empty replay buffer".into()));
        }
        Ok((0..k).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&Experience>> {
        Ok(self.sample_indices(k, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(tag: f64) -> Experience {
        Experience::new(vec![tag], vec![0.0], tag, vec![tag + 1.0]).unwrap()
    }

    #[test]
    fn keeps_last_capacity_items() {
        let mut buf = ReplayBuffer::new(5).unwrap();
        for i in 0..13 {
            buf.push(exp(i as f64));
        }
        assert_eq!(buf.len(), 5);
        let tags: Vec<f64> = buf.iter_oldest_first().map(|e| e.reward).collect();
        assert_eq!(tags, vec![8.0, 9.0, 10.0, 11.0, 12.0]);
    }

    #[test]
    fn partial_fill_order() {
        let mut buf = ReplayBuffer::new(5).unwrap();
        for i in 0..3 {
            buf.push(exp(i as f64));
        }
        let tags: Vec<f64> = buf.iter_oldest_first().map(|e| e.reward).collect();
        assert_eq!(tags, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_experiences() {
        assert!(Experience::new(vec![0.0, 1.0], vec![], 0.0, vec![0.0]).is_err());
        assert!(Experience::new(vec![0.0], vec![], f64::NAN, vec![0.0]).is_err());
        assert!(ReplayBuffer::new(0).is_err());
    }
}
