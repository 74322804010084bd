use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EnvOverrides, EnvSpec};
use crate::error::{Error, Result};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const UP: usize = 2;
pub const DOWN: usize = 3;
pub const NUM_ACTIONS: usize = 4;

/// A one-row grid of `c` cells. Up and down bump into the outer wall.
/// An optional internal wall closes the edge between `wall` and `wall + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularChain {
    cells: usize,
    wall: Option<usize>,
    epsilon: f64,
    horizon: usize,
}

impl TabularChain {
    pub fn new(cells: usize, ov: &EnvOverrides) -> Result<Self> {
        if cells < 2 {
            return Err(Error::UnknownEnv(format!("tabularchain-{cells}")));
        }
        if let Some(w) = ov.wall {
            if w + 1 >= cells {
                return Err(Error::Config(format!("wall {w} outside chain of {cells}")));
            }
        }
        let epsilon = ov.epsilon.unwrap_or(0.5);
        if !(epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(Self {
            cells,
            wall: ov.wall,
            epsilon,
            horizon: ov.horizon.unwrap_or(4 * cells).max(1),
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn wall(&self) -> Option<usize> {
        self.wall
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 1,
            action_dim: 1,
            goal_dim: 1,
            epsilon: self.epsilon,
            horizon: self.horizon,
            action_low: vec![0.0],
            action_high: vec![(NUM_ACTIONS - 1) as f64],
        }
    }

    /// Deterministic successor cell.
    pub fn next_cell(&self, cell: usize, action: usize) -> usize {
        match action {
            LEFT if cell > 0 && self.wall != Some(cell - 1) => cell - 1,
            RIGHT if cell + 1 < self.cells && self.wall != Some(cell) => cell + 1,
            _ => cell,
        }
    }

    pub fn action_index(action: f64) -> usize {
        (action.round() as i64).clamp(0, NUM_ACTIONS as i64 - 1) as usize
    }

    pub fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.random_range(0..self.cells) as f64]
    }

    pub fn sample_goal(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let start = state[0] as usize;
        let mut g = rng.random_range(0..self.cells - 1);
        if g >= start {
            g += 1;
        }
        vec![g as f64]
    }

    pub fn transition(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let cell = state[0] as usize;
        vec![self.next_cell(cell, Self::action_index(action[0])) as f64]
    }

    /// Breadth-first distances to `goal` over the transition graph.
    pub fn distances_to(&self, goal: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.cells];
        dist[goal] = Some(0);
        let mut queue = VecDeque::from([goal]);
        while let Some(c) = queue.pop_front() {
            let d = dist[c].unwrap();
            for p in 0..self.cells {
                if dist[p].is_none() && (0..NUM_ACTIONS).any(|a| self.next_cell(p, a) == c) {
                    dist[p] = Some(d + 1);
                    queue.push_back(p);
                }
            }
        }
        dist
    }

    /// Lowest-index action on a shortest path; a no-op if none exists.
    pub fn greedy_action(&self, state: &[f64], goal: &[f64]) -> Vec<f64> {
        let cell = state[0] as usize;
        let target = goal[0].round().clamp(0.0, (self.cells - 1) as f64) as usize;
        let dist = self.distances_to(target);
        let best = match dist[cell] {
            Some(0) | None => UP,
            Some(d) => (0..NUM_ACTIONS)
                .find(|&a| dist[self.next_cell(cell, a)] == Some(d - 1))
                .unwrap_or(UP),
        };
        vec![best as f64]
    }
}
