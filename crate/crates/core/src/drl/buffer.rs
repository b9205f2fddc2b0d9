//! FIFO replay memory and the best-in-worst-out elite trajectory store.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Obs;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Obs,
    pub action: f64,
    pub reward: f64,
    pub next_obs: Obs,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { capacity, entries: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    /// Uniform sample without replacement of `min(n, len)` transitions.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        let n = n.min(self.entries.len());
        index::sample(rng, self.entries.len(), n).into_iter().map(|i| &self.entries[i]).collect()
    }
}

/// One complete episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Obs>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub total_return: f64,
}

impl Trajectory {
    pub fn push(&mut self, obs: Obs, action: f64, reward: f64) {
        self.states.push(obs);
        self.actions.push(action);
        self.rewards.push(reward);
        self.total_return += reward;
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Keeps the `capacity` highest-return trajectories, sorted descending.
#[derive(Clone, Debug)]
pub struct EliteBuffer {
    capacity: usize,
    trajectories: Vec<Trajectory>,
}

impl EliteBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { capacity, trajectories: Vec::with_capacity(capacity + 1) }
    }

    pub fn min_return(&self) -> Option<f64> {
        self.trajectories.last().map(|t| t.total_return)
    }

    /// Admission rule: always while not full, otherwise only when the
    /// candidate's return is at least the current minimum, which it evicts.
    pub fn admits(&self, total_return: f64) -> bool {
        self.trajectories.len() < self.capacity || self.min_return().map_or(true, |m| total_return >= m)
    }

    pub fn insert(&mut self, traj: Trajectory) -> bool {
        if !self.admits(traj.total_return) {
            return false;
        }
        if self.trajectories.len() == self.capacity {
            self.trajectories.pop();
        }
        // after existing equal returns, so older entries keep their rank
        let pos = self.trajectories.partition_point(|t| t.total_return >= traj.total_return);
        self.trajectories.insert(pos, traj);
        true
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn returns(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.total_return).collect()
    }

    /// Up to `n` whole trajectories, uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Trajectory> {
        let n = n.min(self.trajectories.len());
        index::sample(rng, self.trajectories.len(), n).into_iter().map(|i| &self.trajectories[i]).collect()
    }
}
