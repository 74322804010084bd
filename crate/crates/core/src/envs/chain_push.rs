use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EnvOverrides, EnvSpec};
use crate::error::{Error, Result};

const STEP: f64 = 0.1;
const CONTACT: f64 = 0.02;
const START_SPREAD: f64 = 0.25;
const GOAL_SPREAD: f64 = 0.35;

/// Agent and `m` blocks on the segment `[0, m+1]`.
///
/// Action is `[velocity, press]`. With `press > 0` the agent is engaged and
/// shoves any block it runs into (and blocks those run into); otherwise it
/// slides over them. State is `[agent, block_1, …, block_m]`, the goal is the
/// block positions only.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPush {
    blocks: usize,
    epsilon: f64,
    horizon: usize,
}

impl ChainPush {
    pub fn new(blocks: usize, ov: &EnvOverrides) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::UnknownEnv(format!("chainpush-{blocks}")));
        }
        let epsilon = ov.epsilon.unwrap_or(0.05);
        if !(epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(Self {
            blocks,
            epsilon,
            horizon: ov.horizon.unwrap_or(80 * blocks).max(1),
        })
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 1 + self.blocks,
            action_dim: 2,
            goal_dim: self.blocks,
            epsilon: self.epsilon,
            horizon: self.horizon,
            action_low: vec![-1.0; 2],
            action_high: vec![1.0; 2],
        }
    }

    /// Inclusive bounds of the goal sampler for block `i` (zero-based).
    pub fn goal_bounds(&self, i: usize) -> (f64, f64) {
        let c = (i + 1) as f64;
        (c - GOAL_SPREAD, c + GOAL_SPREAD)
    }

    pub fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut s = Vec::with_capacity(1 + self.blocks);
        s.push(rng.random_range(0.0..0.5));
        for i in 0..self.blocks {
            let c = (i + 1) as f64;
            s.push(c + rng.random_range(-START_SPREAD..START_SPREAD));
        }
        s
    }

    pub fn sample_goal(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.blocks)
            .map(|i| {
                let (lo, hi) = self.goal_bounds(i);
                rng.random_range(lo..hi)
            })
            .collect()
    }

    pub fn transition(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let hi = (self.blocks + 1) as f64;
        let x = state[0];
        let nx = (x + STEP * action[0]).clamp(0.0, hi);
        let mut next = state.to_vec();
        next[0] = nx;
        if action[1] <= 0.0 || nx == x {
            return next;
        }
        let blocks = &mut next[1..];
        if nx > x {
            let mut front = nx + CONTACT;
            for b in blocks.iter_mut() {
                if *b < x {
                    continue;
                }
                if *b < front {
                    *b = front.min(hi);
                    front = *b + CONTACT;
                } else {
                    break;
                }
            }
        } else {
            let mut front = nx - CONTACT;
            for b in blocks.iter_mut().rev() {
                if *b > x {
                    continue;
                }
                if *b > front {
                    *b = front.max(0.0);
                    front = *b - CONTACT;
                } else {
                    break;
                }
            }
        }
        next
    }

    /// Fix blocks in index order: walk around the first misplaced block
    /// disengaged, then push it onto its target.
    pub fn greedy_action(&self, state: &[f64], goal: &[f64]) -> Vec<f64> {
        let x = state[0];
        let tol = 0.5 * self.epsilon / (self.blocks as f64).sqrt();
        let Some(i) = (0..self.blocks).find(|&i| (state[1 + i] - goal[i]).abs() > tol) else {
            return vec![0.0, -1.0];
        };
        let b = state[1 + i];
        let g = goal[i];
        let (target, press) = if g > b {
            if x > b - 0.5 * CONTACT {
                (b - 3.0 * CONTACT, -1.0)
            } else {
                (g - CONTACT, 1.0)
            }
        } else if x < b + 0.5 * CONTACT {
            (b + 3.0 * CONTACT, -1.0)
        } else {
            (g + CONTACT, 1.0)
        };
        let v = ((target - x) / STEP).clamp(-1.0, 1.0);
        vec![v, press]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> ChainPush {
        ChainPush::new(2, &EnvOverrides::default()).unwrap()
    }

    #[test]
    fn disengaged_agent_passes_over() {
        let s = env().transition(&[0.95, 1.0, 2.0], &[1.0, -1.0]);
        assert_eq!(&s[1..], &[1.0, 2.0]);
        assert!((s[0] - 1.05).abs() < 1e-12);
    }

    #[test]
    fn engaged_agent_pushes_chain() {
        let s = env().transition(&[0.95, 1.0, 1.04], &[1.0, 1.0]);
        assert!((s[1] - 1.07).abs() < 1e-12);
        assert!((s[2] - 1.09).abs() < 1e-12);
        let s = env().transition(&[1.05, 1.0, 2.0], &[-1.0, 1.0]);
        assert_eq!(s[2], 2.0);
        assert!((s[1] - 0.93).abs() < 1e-12);
    }

    #[test]
    fn no_contact_no_motion() {
        let s = env().transition(&[0.2, 1.0, 2.0], &[1.0, 1.0]);
        assert_eq!(&s[1..], &[1.0, 2.0]);
    }
}
