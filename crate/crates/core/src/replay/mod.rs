//! Trajectory storage, hindsight relabeling and subgoal extraction.

mod dataset;

pub use dataset::Dataset;

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;

use crate::envs::sparse_reward;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Goal the action was conditioned on (subgoal or final goal).
    pub goal: Vec<f64>,
    pub done: bool,
    pub achieved_next: Vec<f64>,
}

/// One episode. `states` and `achieved` hold `T+1` entries, the per-step
/// arrays hold `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub achieved: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub goals_used: Vec<Vec<f64>>,
    pub dones: Vec<bool>,
    pub desired_goal: Vec<f64>,
}

impl Trajectory {
    pub fn start(state: Vec<f64>, achieved: Vec<f64>, desired_goal: Vec<f64>) -> Self {
        Self {
            states: vec![state],
            achieved: vec![achieved],
            actions: Vec::new(),
            rewards: Vec::new(),
            goals_used: Vec::new(),
            dones: Vec::new(),
            desired_goal,
        }
    }

    pub fn push(
        &mut self,
        action: Vec<f64>,
        reward: f64,
        next_state: Vec<f64>,
        achieved_next: Vec<f64>,
        goal_used: Vec<f64>,
        done: bool,
    ) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.states.push(next_state);
        self.achieved.push(achieved_next);
        self.goals_used.push(goal_used);
        self.dones.push(done);
    }

    /// Build from a transition list; consecutive transitions must chain.
    pub fn from_transitions(
        transitions: &[Transition],
        achieved_start: Vec<f64>,
        desired_goal: Vec<f64>,
    ) -> Result<Self> {
        let first = transitions
            .first()
            .ok_or_else(|| Error::InvalidTrajectory("no transitions".into()))?;
        let mut traj = Self::start(first.state.clone(), achieved_start, desired_goal);
        for (t, tr) in transitions.iter().enumerate() {
            if tr.state != *traj.states.last().unwrap() {
                return Err(Error::InvalidTrajectory(format!(
                    "transition {t} does not start where transition {} ended",
                    t.saturating_sub(1)
                )));
            }
            traj.push(
                tr.action.clone(),
                tr.reward,
                tr.next_state.clone(),
                tr.achieved_next.clone(),
                tr.goal.clone(),
                tr.done,
            );
        }
        Ok(traj)
    }

    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn final_achieved(&self) -> &[f64] {
        self.achieved.last().expect("trajectory has a start state")
    }

    pub fn transition(&self, t: usize) -> Transition {
        Transition {
            state: self.states[t].clone(),
            action: self.actions[t].clone(),
            reward: self.rewards[t],
            next_state: self.states[t + 1].clone(),
            goal: self.goals_used[t].clone(),
            done: self.dones[t],
            achieved_next: self.achieved[t + 1].clone(),
        }
    }

    /// Structural checks plus reward consistency under `eps`.
    pub fn validate(&self, eps: f64) -> Result<()> {
        let t = self.len();
        if t == 0 {
            return Err(Error::InvalidTrajectory("empty trajectory".into()));
        }
        if self.states.len() != t + 1
            || self.achieved.len() != t + 1
            || self.rewards.len() != t
            || self.goals_used.len() != t
            || self.dones.len() != t
        {
            return Err(Error::InvalidTrajectory("inconsistent array lengths".into()));
        }
        let sd = self.states[0].len();
        let gd = self.desired_goal.len();
        let ad = self.actions[0].len();
        for i in 0..t {
            if self.states[i + 1].len() != sd
                || self.achieved[i + 1].len() != gd
                || self.goals_used[i].len() != gd
                || self.actions[i].len() != ad
            {
                return Err(Error::InvalidTrajectory(format!("dimension change at step {i}")));
            }
            let r = sparse_reward(&self.achieved[i + 1], &self.goals_used[i], eps);
            if r != self.rewards[i] {
                return Err(Error::InvalidTrajectory(format!(
                    "reward at step {i} is {} but the goal distance gives {r}",
                    self.rewards[i]
                )));
            }
        }
        if self.achieved[0].len() != gd {
            return Err(Error::InvalidTrajectory("achieved goal dimension".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HerMode {
    Future,
    Final,
    None,
}

impl HerMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "future" => Ok(HerMode::Future),
            "final" => Ok(HerMode::Final),
            "none" => Ok(HerMode::None),
            other => Err(Error::InvalidArgument(format!("unknown HER mode `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HerMode::Future => "future",
            HerMode::Final => "final",
            HerMode::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HerStrategy {
    pub mode: HerMode,
    pub relabel_ratio: f64,
}

impl HerStrategy {
    pub fn new(mode: HerMode, relabel_ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&relabel_ratio) {
            return Err(Error::InvalidArgument(format!(
                "relabel ratio must lie in [0, 1], got {relabel_ratio}"
            )));
        }
        Ok(Self {
            mode,
            relabel_ratio,
        })
    }
}

impl Default for HerStrategy {
    fn default() -> Self {
        Self {
            mode: HerMode::Future,
            relabel_ratio: 0.8,
        }
    }
}

/// Where a sampled transition came from and which achieved-goal index
/// replaced its goal, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOrigin {
    pub trajectory: usize,
    pub step: usize,
    pub relabel_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledBatch {
    pub transitions: Vec<Transition>,
    pub origins: Vec<SampleOrigin>,
}

/// Row-stacked batch ready for the learners.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchArrays {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array2<f64>,
    pub next_states: Array2<f64>,
    pub goals: Array2<f64>,
    pub dones: Array2<f64>,
}

impl BatchArrays {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        let first = ts
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let stack = |f: &dyn Fn(&Transition) -> &[f64], width: usize| -> Result<Array2<f64>> {
            let mut data = Vec::with_capacity(ts.len() * width);
            for t in ts {
                let row = f(t);
                if row.len() != width {
                    return Err(shape_err("batch row", width, row.len()));
                }
                data.extend_from_slice(row);
            }
            Ok(Array2::from_shape_vec((ts.len(), width), data).expect("sized above"))
        };
        Ok(Self {
            states: stack(&|t| &t.state, first.state.len())?,
            actions: stack(&|t| &t.action, first.action.len())?,
            rewards: Array2::from_shape_fn((ts.len(), 1), |(i, _)| ts[i].reward),
            next_states: stack(&|t| &t.next_state, first.next_state.len())?,
            goals: stack(&|t| &t.goal, first.goal.len())?,
            dones: Array2::from_shape_fn((ts.len(), 1), |(i, _)| f64::from(u8::from(ts[i].done))),
        })
    }
}

/// FIFO store of whole trajectories; capacity counts trajectories.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    epsilon: f64,
    trajectories: VecDeque<Trajectory>,
    inserted: u64,
    transitions: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, epsilon: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be positive".into()));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        Ok(Self {
            capacity,
            epsilon,
            trajectories: VecDeque::new(),
            inserted: 0,
            transitions: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions
    }

    pub fn trajectory(&self, i: usize) -> Option<&Trajectory> {
        self.trajectories.get(i)
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter()
    }

    pub fn store(&mut self, traj: Trajectory) -> Result<()> {
        traj.validate(self.epsilon)?;
        if self.trajectories.len() == self.capacity {
            if let Some(old) = self.trajectories.pop_front() {
                self.transitions -= old.len();
            }
        }
        self.transitions += traj.len();
        self.trajectories.push_back(traj);
        self.inserted += 1;
        Ok(())
    }

    /// Uniform trajectory, then uniform step; each draw is relabeled with
    /// probability `relabel_ratio` and its reward and done flag recomputed.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        her: HerStrategy,
        rng: &mut R,
    ) -> Result<SampledBatch> {
        if n == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if self.trajectories.is_empty() {
            return Err(Error::InvalidArgument("cannot sample from an empty buffer".into()));
        }
        let mut transitions = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        for _ in 0..n {
            let ti = rng.random_range(0..self.trajectories.len());
            let traj = &self.trajectories[ti];
            let t = rng.random_range(0..traj.len());
            let mut tr = traj.transition(t);
            let relabel = her.mode != HerMode::None && rng.random::<f64>() < her.relabel_ratio;
            let relabel_index = if relabel {
                let j = match her.mode {
                    HerMode::Future => rng.random_range(t + 1..=traj.len()),
                    _ => traj.len(),
                };
                tr.goal = traj.achieved[j].clone();
                tr.reward = sparse_reward(&tr.achieved_next, &tr.goal, self.epsilon);
                tr.done = tr.reward == 0.0;
                Some(j)
            } else {
                None
            };
            transitions.push(tr);
            origins.push(SampleOrigin {
                trajectory: ti,
                step: t,
                relabel_index,
            });
        }
        Ok(SampledBatch {
            transitions,
            origins,
        })
    }

    pub fn sample_arrays<R: Rng + ?Sized>(
        &self,
        n: usize,
        her: HerStrategy,
        rng: &mut R,
    ) -> Result<BatchArrays> {
        BatchArrays::from_transitions(&self.sample(n, her, rng)?.transitions)
    }
}

/// Evenly spaced waypoints of one trajectory with their segment-start states.
#[derive(Debug, Clone, PartialEq)]
pub struct HindsightSample {
    /// Final achieved goal, used as the relabeled task goal.
    pub goal: Vec<f64>,
    pub subgoals: Vec<Vec<f64>>,
    pub anchors: Vec<Vec<f64>>,
    pub subgoal_indices: Vec<usize>,
    pub anchor_indices: Vec<usize>,
}

/// Waypoint `i` (1 ≤ i < n) sits at `⌊i·T/n⌋`; its anchor at `⌊(i−1)·T/n⌋`.
pub fn hindsight_subgoals(traj: &Trajectory, n: usize) -> Result<HindsightSample> {
    let t = traj.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("subgoal count must be >= 2, got {n}")));
    }
    if t < n {
        return Err(Error::InvalidTrajectory(format!(
            "trajectory of length {t} is shorter than the subgoal count {n}"
        )));
    }
    let subgoal_indices: Vec<usize> = (1..n).map(|i| i * t / n).collect();
    let anchor_indices: Vec<usize> = (1..n).map(|i| (i - 1) * t / n).collect();
    Ok(HindsightSample {
        goal: traj.final_achieved().to_vec(),
        subgoals: subgoal_indices.iter().map(|&j| traj.achieved[j].clone()).collect(),
        anchors: anchor_indices.iter().map(|&j| traj.states[j].clone()).collect(),
        subgoal_indices,
        anchor_indices,
    })
}
