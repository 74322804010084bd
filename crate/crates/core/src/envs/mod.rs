//! Goal-conditioned environments with sparse reward.

mod chain_push;
mod point_rooms;
pub mod tabular_chain;

pub use chain_push::ChainPush;
pub use point_rooms::PointRooms;
pub use tabular_chain::TabularChain;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};

/// `0` when `‖ag − g‖₂ ≤ ε`, else `−1`.
pub fn sparse_reward(achieved: &[f64], goal: &[f64], eps: f64) -> f64 {
    if distance(achieved, goal) <= eps {
        0.0
    } else {
        -1.0
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    pub epsilon: f64,
    pub horizon: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl EnvSpec {
    pub fn clamp_action(&self, action: &[f64]) -> Result<Vec<f64>> {
        if action.len() != self.action_dim {
            return Err(shape_err("action", self.action_dim, action.len()));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action"));
        }
        Ok(action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
            .collect())
    }
}

/// Per-environment dynamics, samplers and scripted controller.
#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    PointRooms(PointRooms),
    ChainPush(ChainPush),
    TabularChain(TabularChain),
}

impl Layout {
    pub fn spec(&self) -> EnvSpec {
        match self {
            Layout::PointRooms(e) => e.spec(),
            Layout::ChainPush(e) => e.spec(),
            Layout::TabularChain(e) => e.spec(),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Layout::PointRooms(e) => format!("pointrooms-{}", e.rooms()),
            Layout::ChainPush(e) => format!("chainpush-{}", e.blocks()),
            Layout::TabularChain(e) => format!("tabularchain-{}", e.cells()),
        }
    }

    pub fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Layout::PointRooms(e) => e.sample_initial(rng),
            Layout::ChainPush(e) => e.sample_initial(rng),
            Layout::TabularChain(e) => e.sample_initial(rng),
        }
    }

    pub fn sample_goal(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Layout::PointRooms(e) => e.sample_goal(rng),
            Layout::ChainPush(e) => e.sample_goal(rng),
            Layout::TabularChain(e) => e.sample_goal(state, rng),
        }
    }

    /// Next state for an already clamped action.
    pub fn transition(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        match self {
            Layout::PointRooms(e) => e.transition(state, action),
            Layout::ChainPush(e) => e.transition(state, action),
            Layout::TabularChain(e) => e.transition(state, action),
        }
    }

    pub fn achieved_goal(&self, state: &[f64]) -> Vec<f64> {
        match self {
            Layout::PointRooms(_) => state[..2].to_vec(),
            Layout::ChainPush(_) => state[1..].to_vec(),
            Layout::TabularChain(_) => state[..1].to_vec(),
        }
    }

    /// Waypoint-greedy controller plus uniform noise of amplitude `noise`.
    pub fn scripted_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        goal: &[f64],
        noise: f64,
        rng: &mut R,
    ) -> Vec<f64> {
        let greedy = match self {
            Layout::PointRooms(e) => e.greedy_action(state, goal),
            Layout::ChainPush(e) => e.greedy_action(state, goal),
            Layout::TabularChain(e) => e.greedy_action(state, goal),
        };
        let spec = self.spec();
        greedy
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let jitter = if noise > 0.0 {
                    rng.random_range(-noise..=noise)
                } else {
                    0.0
                };
                (a + jitter).clamp(spec.action_low[i], spec.action_high[i])
            })
            .collect()
    }
}

/// Config-level tweaks applied on top of an environment id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvOverrides {
    pub epsilon: Option<f64>,
    pub horizon: Option<usize>,
    pub door_ys: Option<Vec<f64>>,
    pub wall: Option<usize>,
}

pub fn make_layout(id: &str, overrides: &EnvOverrides) -> Result<Layout> {
    let (name, size) = id
        .rsplit_once('-')
        .ok_or_else(|| Error::UnknownEnv(id.to_string()))?;
    let size: usize = size
        .parse()
        .map_err(|_| Error::UnknownEnv(id.to_string()))?;
    let layout = match name {
        "pointrooms" => Layout::PointRooms(PointRooms::new(size, overrides)?),
        "chainpush" => Layout::ChainPush(ChainPush::new(size, overrides)?),
        "tabularchain" => Layout::TabularChain(TabularChain::new(size, overrides)?),
        _ => return Err(Error::UnknownEnv(id.to_string())),
    };
    Ok(layout)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    /// Episode is over (goal reached with termination enabled, or time limit).
    pub done: bool,
    /// Goal reached on this step.
    pub success: bool,
    /// Ended only because the horizon ran out.
    pub truncated: bool,
    pub achieved_goal: Vec<f64>,
}

/// A running episode: layout plus mutable state, goal, clock and rng.
#[derive(Debug, Clone)]
pub struct Env {
    layout: Layout,
    spec: EnvSpec,
    state: Vec<f64>,
    goal: Vec<f64>,
    t: usize,
    finished: bool,
    done_on_success: bool,
    rng: ChaCha8Rng,
}

impl Env {
    pub fn new(layout: Layout) -> Self {
        let spec = layout.spec();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let state = layout.sample_initial(&mut rng);
        let goal = layout.sample_goal(&state, &mut rng);
        Self {
            layout,
            spec,
            state,
            goal,
            t: 0,
            finished: false,
            done_on_success: true,
            rng,
        }
    }

    pub fn make(id: &str, overrides: &EnvOverrides) -> Result<Self> {
        Ok(Self::new(make_layout(id, overrides)?))
    }

    pub fn set_done_on_success(&mut self, on: bool) {
        self.done_on_success = on;
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn goal(&self) -> &[f64] {
        &self.goal
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn achieved_goal(&self, state: &[f64]) -> Vec<f64> {
        self.layout.achieved_goal(state)
    }

    /// Reseed and draw `(s0, g)`.
    pub fn reset(&mut self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset_continue()
    }

    /// Draw the next `(s0, g)` from the current rng stream.
    pub fn reset_continue(&mut self) -> (Vec<f64>, Vec<f64>) {
        self.state = self.layout.sample_initial(&mut self.rng);
        self.goal = self.layout.sample_goal(&self.state, &mut self.rng);
        self.t = 0;
        self.finished = false;
        (self.state.clone(), self.goal.clone())
    }

    /// Start an episode from an explicit state and goal.
    pub fn reset_to(&mut self, state: &[f64], goal: &[f64]) -> Result<()> {
        if state.len() != self.spec.state_dim {
            return Err(shape_err("reset_to state", self.spec.state_dim, state.len()));
        }
        if goal.len() != self.spec.goal_dim {
            return Err(shape_err("reset_to goal", self.spec.goal_dim, goal.len()));
        }
        self.state = state.to_vec();
        self.goal = goal.to_vec();
        self.t = 0;
        self.finished = false;
        Ok(())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.finished || self.t >= self.spec.horizon {
            return Err(Error::EpisodeFinished);
        }
        let action = self.spec.clamp_action(action)?;
        let next = self.layout.transition(&self.state, &action);
        let ag = self.layout.achieved_goal(&next);
        let reward = sparse_reward(&ag, &self.goal, self.spec.epsilon);
        self.t += 1;
        let success = reward == 0.0;
        let timeout = self.t >= self.spec.horizon;
        let done = (success && self.done_on_success) || timeout;
        self.finished = done;
        self.state = next.clone();
        Ok(StepOutcome {
            state: next,
            reward,
            done,
            success,
            truncated: timeout && !(success && self.done_on_success),
            achieved_goal: ag,
        })
    }

    pub fn scripted_action<R: Rng + ?Sized>(&self, noise: f64, rng: &mut R) -> Vec<f64> {
        self.layout
            .scripted_action(&self.state, &self.goal, noise, rng)
    }
}
