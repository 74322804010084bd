use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EnvOverrides, EnvSpec};
use crate::error::{Error, Result};

const STEP: f64 = 0.1;
const DOOR_HALF_WIDTH: f64 = 0.1;
const WALL_MARGIN: f64 = 1e-3;
const SPAWN_MARGIN: f64 = 0.05;

/// `k` unit rooms side by side along x, separated by walls at `x = 1..k-1`
/// with one door per wall. State is `[x, y, door_y_1, …, door_y_{k-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRooms {
    rooms: usize,
    door_ys: Vec<f64>,
    epsilon: f64,
    horizon: usize,
}

impl PointRooms {
    pub fn new(rooms: usize, ov: &EnvOverrides) -> Result<Self> {
        if rooms == 0 {
            return Err(Error::UnknownEnv(format!("pointrooms-{rooms}")));
        }
        let door_ys = match &ov.door_ys {
            Some(ys) => {
                if ys.len() != rooms - 1 {
                    return Err(Error::Config(format!(
                        "pointrooms-{rooms} needs {} door positions, got {}",
                        rooms - 1,
                        ys.len()
                    )));
                }
                if ys
                    .iter()
                    .any(|&y| !(DOOR_HALF_WIDTH..=1.0 - DOOR_HALF_WIDTH).contains(&y))
                {
                    return Err(Error::Config("door position out of range".into()));
                }
                ys.clone()
            }
            None => (1..rooms)
                .map(|i| if i % 2 == 1 { 0.8 } else { 0.2 })
                .collect(),
        };
        let epsilon = ov.epsilon.unwrap_or(0.05);
        if !(epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(Self {
            rooms,
            door_ys,
            epsilon,
            horizon: ov.horizon.unwrap_or(100 * rooms).max(1),
        })
    }

    pub fn rooms(&self) -> usize {
        self.rooms
    }

    pub fn door_ys(&self) -> &[f64] {
        &self.door_ys
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 2 + self.door_ys.len(),
            action_dim: 2,
            goal_dim: 2,
            epsilon: self.epsilon,
            horizon: self.horizon,
            action_low: vec![-1.0; 2],
            action_high: vec![1.0; 2],
        }
    }

    fn with_walls(&self, x: f64, y: f64) -> Vec<f64> {
        let mut s = Vec::with_capacity(2 + self.door_ys.len());
        s.push(x);
        s.push(y);
        s.extend_from_slice(&self.door_ys);
        s
    }

    pub fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let x = rng.random_range(SPAWN_MARGIN..1.0 - SPAWN_MARGIN);
        let y = rng.random_range(SPAWN_MARGIN..1.0 - SPAWN_MARGIN);
        self.with_walls(x, y)
    }

    pub fn sample_goal(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let lo = (self.rooms - 1) as f64;
        let x = rng.random_range(lo + SPAWN_MARGIN..lo + 1.0 - SPAWN_MARGIN);
        let y = rng.random_range(SPAWN_MARGIN..1.0 - SPAWN_MARGIN);
        vec![x, y]
    }

    fn in_door(&self, wall: usize, y: f64) -> bool {
        (y - self.door_ys[wall - 1]).abs() <= DOOR_HALF_WIDTH
    }

    pub fn transition(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let (x, y) = (state[0], state[1]);
        let mut nx = (x + STEP * action[0]).clamp(0.0, self.rooms as f64);
        let ny = (y + STEP * action[1]).clamp(0.0, 1.0);
        // A step is shorter than a room, so at most one wall lies between x and nx.
        if nx > x {
            let wall = x.floor() + 1.0;
            if nx >= wall && wall < self.rooms as f64 {
                let frac = (wall - x) / (nx - x);
                let yc = y + frac * (ny - y);
                if !self.in_door(wall as usize, yc) {
                    nx = wall - WALL_MARGIN;
                }
            }
        } else if nx < x {
            let wall = x.ceil() - 1.0;
            if nx <= wall && wall >= 1.0 {
                let frac = (x - wall) / (x - nx);
                let yc = y + frac * (ny - y);
                if !self.in_door(wall as usize, yc) {
                    nx = wall + WALL_MARGIN;
                }
            }
        }
        self.with_walls(nx, ny)
    }

    fn room_of(&self, x: f64) -> usize {
        (x.floor() as usize).min(self.rooms - 1)
    }

    /// Unit-speed action toward the next waypoint: the door of the wall
    /// between the agent's room and the goal's room, or the goal itself.
    pub fn greedy_action(&self, state: &[f64], goal: &[f64]) -> Vec<f64> {
        let (x, y) = (state[0], state[1]);
        let here = self.room_of(x);
        let there = self.room_of(goal[0]);
        let target = if here < there {
            let wall = here + 1;
            let dy = self.door_ys[wall - 1];
            let w = wall as f64;
            if (y - dy).abs() <= 0.5 * DOOR_HALF_WIDTH && x >= w - 0.2 {
                [w + 0.15, dy]
            } else {
                [w - 0.15, dy]
            }
        } else if here > there {
            let wall = here;
            let dy = self.door_ys[wall - 1];
            let w = wall as f64;
            if (y - dy).abs() <= 0.5 * DOOR_HALF_WIDTH && x <= w + 0.2 {
                [w - 0.15, dy]
            } else {
                [w + 0.15, dy]
            }
        } else {
            [goal[0], goal[1]]
        };
        let (dx, dy) = (target[0] - x, target[1] - y);
        let d = (dx * dx + dy * dy).sqrt();
        if d < 1e-12 {
            return vec![0.0, 0.0];
        }
        let speed = (d / STEP).min(1.0);
        vec![speed * dx / d, speed * dy / d]
    }
}
