//! Subgoal selection by value, option-structured rollouts and a Monte-Carlo
//! reachability estimate.

use std::fmt::Write as _;

use rand::Rng;

use crate::envs::{distance, Env, Layout};
use crate::error::{Error, Result};
use crate::replay::Trajectory;
use crate::sac::{PolicyMode, Sac};
use crate::subgoal::{sample_subgoals, SubgoalGenerator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorMode {
    /// Highest state value, lowest index on ties.
    Value,
    /// First sampled candidate.
    First,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub time_limit: usize,
    pub subgoal_count: usize,
    pub candidates: usize,
    pub snap_eps: f64,
    pub zero_noise_candidates: bool,
    pub selector: SelectorMode,
    /// Regenerate on absolute `t mod T = 0` instead of per-option clocks.
    pub literal_mod_rule: bool,
    /// Skip the planner and condition on the final goal throughout.
    pub flat: bool,
    pub log_decisions: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            time_limit: 30,
            subgoal_count: 4,
            candidates: 16,
            snap_eps: 0.05,
            zero_noise_candidates: false,
            selector: SelectorMode::Value,
            literal_mod_rule: false,
            flat: false,
            log_decisions: false,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_limit == 0 {
            return Err(Error::InvalidArgument("time limit must be >= 1".into()));
        }
        if self.candidates == 0 {
            return Err(Error::InvalidArgument("candidate count must be >= 1".into()));
        }
        if self.subgoal_count < 2 {
            return Err(Error::InvalidArgument("subgoal count must be >= 2".into()));
        }
        if !(self.snap_eps > 0.0) {
            return Err(Error::InvalidArgument("snap threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Action source for rollouts.
pub trait LowLevelPolicy {
    fn act(&mut self, state: &[f64], goal: &[f64]) -> Result<Vec<f64>>;
}

/// Candidate generator and ranking for the selector.
pub trait SubgoalProposer {
    fn propose(&mut self, state: &[f64], goal: &[f64], k: usize, zero_noise: bool)
        -> Result<Vec<Vec<f64>>>;
    fn values(&mut self, state: &[f64], candidates: &[Vec<f64>]) -> Result<Vec<f64>>;
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_lowest(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if !(v > values[b]) => {}
            _ => best = Some(i),
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub subgoal: Vec<f64>,
    pub index: usize,
    pub snapped: bool,
    pub candidates: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// Pick among given candidates, then snap to `goal` when close enough.
pub fn choose_subgoal(
    candidates: Vec<Vec<f64>>,
    values: Vec<f64>,
    goal: &[f64],
    snap_eps: f64,
    mode: SelectorMode,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no subgoal candidates".into()));
    }
    let index = match mode {
        SelectorMode::First => 0,
        SelectorMode::Value => {
            if values.len() != candidates.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} values for {} candidates",
                    values.len(),
                    candidates.len()
                )));
            }
            argmax_lowest(&values).expect("non-empty")
        }
    };
    let winner = &candidates[index];
    let snapped = distance(winner, goal) <= snap_eps;
    let subgoal = if snapped {
        goal.to_vec()
    } else {
        winner.clone()
    };
    Ok(Selection {
        subgoal,
        index,
        snapped,
        candidates,
        values,
    })
}

pub fn select_subgoal<P: SubgoalProposer + ?Sized>(
    proposer: &mut P,
    state: &[f64],
    goal: &[f64],
    cfg: &PlannerConfig,
) -> Result<Selection> {
    if cfg.candidates == 0 {
        return Err(Error::InvalidArgument("candidate count must be >= 1".into()));
    }
    let candidates = proposer.propose(state, goal, cfg.candidates, cfg.zero_noise_candidates)?;
    let values = match cfg.selector {
        SelectorMode::Value => proposer.values(state, &candidates)?,
        SelectorMode::First => Vec::new(),
    };
    choose_subgoal(candidates, values, goal, cfg.snap_eps, cfg.selector)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Start,
    Timeout,
    Reached,
}

impl Event {
    pub fn name(self) -> &'static str {
        match self {
            Event::Start => "start",
            Event::Timeout => "timeout",
            Event::Reached => "reached",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptionRecord {
    pub start_t: usize,
    pub initial_state: Vec<f64>,
    pub subgoal: Vec<f64>,
    pub terminal_state: Vec<f64>,
    pub steps: usize,
    pub reached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub options: Vec<OptionRecord>,
    pub decision_log: Vec<String>,
    pub success: bool,
    pub episode_return: f64,
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("[{}]", parts.join(","))
}

fn log_line(t: usize, event: Event, sel: &Selection) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "t={t} event={} subgoal={} values={}",
        event.name(),
        fmt_vec(&sel.subgoal),
        fmt_vec(&sel.values)
    );
    s
}

/// Run one episode from the env's current state. Stored transitions are
/// conditioned on, and rewarded against, the active subgoal.
pub fn collect_rollout<L, P>(
    env: &mut Env,
    policy: &mut L,
    proposer: &mut P,
    cfg: &PlannerConfig,
) -> Result<Rollout>
where
    L: LowLevelPolicy + ?Sized,
    P: SubgoalProposer + ?Sized,
{
    cfg.validate()?;
    let eps = env.spec().epsilon;
    let goal = env.goal().to_vec();
    let s0 = env.state().to_vec();
    let mut trajectory = Trajectory::start(s0.clone(), env.achieved_goal(&s0), goal.clone());
    let mut options = Vec::new();
    let mut log = Vec::new();
    let mut episode_return = 0.0;
    let mut success = false;

    let mut select = |state: &[f64], t: usize, event: Event, log: &mut Vec<String>| -> Result<Vec<f64>> {
        if cfg.flat {
            return Ok(goal.clone());
        }
        let sel = select_subgoal(proposer, state, &goal, cfg)?;
        if cfg.log_decisions {
            log.push(log_line(t, event, &sel));
        }
        Ok(sel.subgoal)
    };

    let mut subgoal = select(&s0, 0, Event::Start, &mut log)?;
    let mut record = OptionRecord {
        start_t: 0,
        initial_state: s0,
        subgoal: subgoal.clone(),
        terminal_state: Vec::new(),
        steps: 0,
        reached: false,
    };
    let mut t = 0;
    loop {
        let state = env.state().to_vec();
        let action = policy.act(&state, &subgoal)?;
        let out = env.step(&action)?;
        let action = env.spec().clamp_action(&action)?;
        t += 1;
        record.steps += 1;
        episode_return += out.reward;
        success |= out.success;
        let sub_dist = distance(&out.achieved_goal, &subgoal);
        let reached = sub_dist <= eps;
        let sub_reward = if reached { 0.0 } else { -1.0 };
        trajectory.push(
            action,
            sub_reward,
            out.state.clone(),
            out.achieved_goal.clone(),
            subgoal.clone(),
            reached,
        );
        let timeout = if cfg.literal_mod_rule {
            t % cfg.time_limit == 0
        } else {
            record.steps >= cfg.time_limit
        };
        let switch = !cfg.flat && (reached || timeout);
        if out.done || switch {
            record.terminal_state = out.state.clone();
            record.reached = reached;
        }
        if out.done {
            options.push(record);
            break;
        }
        if switch {
            let event = if reached {
                Event::Reached
            } else {
                Event::Timeout
            };
            subgoal = select(&out.state, t, event, &mut log)?;
            let next = OptionRecord {
                start_t: t,
                initial_state: out.state,
                subgoal: subgoal.clone(),
                terminal_state: Vec::new(),
                steps: 0,
                reached: false,
            };
            options.push(std::mem::replace(&mut record, next));
        }
    }
    Ok(Rollout {
        trajectory,
        options,
        decision_log: log,
        success,
        episode_return,
    })
}

/// SAC actor as a rollout policy.
pub struct SacPolicy<'a, R: Rng> {
    pub sac: &'a Sac,
    pub mode: PolicyMode,
    pub rng: &'a mut R,
}

impl<R: Rng> LowLevelPolicy for SacPolicy<'_, R> {
    fn act(&mut self, state: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        Ok(self.sac.policy_action(state, goal, self.mode, self.rng)?.0)
    }
}

/// Generator candidates ranked by the SAC state value.
pub struct GeneratorProposer<'a, R: Rng> {
    pub generator: &'a SubgoalGenerator,
    pub sac: &'a Sac,
    pub rng: &'a mut R,
}

impl<R: Rng> SubgoalProposer for GeneratorProposer<'_, R> {
    fn propose(
        &mut self,
        state: &[f64],
        goal: &[f64],
        k: usize,
        zero_noise: bool,
    ) -> Result<Vec<Vec<f64>>> {
        let dist = self.generator.encode(state, goal)?;
        sample_subgoals(&dist, k, zero_noise, self.rng)
    }

    fn values(&mut self, state: &[f64], candidates: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.sac.candidate_values(state, candidates)
    }
}

/// Proposer that always offers the final goal; used by the flat baseline.
pub struct GoalProposer;

impl SubgoalProposer for GoalProposer {
    fn propose(&mut self, _: &[f64], goal: &[f64], k: usize, _: bool) -> Result<Vec<Vec<f64>>> {
        Ok(vec![goal.to_vec(); k])
    }

    fn values(&mut self, _: &[f64], candidates: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(vec![0.0; candidates.len()])
    }
}

/// Fraction of `m` rollouts from `start` that bring the achieved goal within
/// `ε` of `subgoal` in at most `budget` steps.
pub fn feasibility_estimate<F, R>(
    layout: &Layout,
    mut policy: F,
    start: &[f64],
    subgoal: &[f64],
    m: usize,
    budget: usize,
    rng: &mut R,
) -> Result<f64>
where
    F: FnMut(&[f64], &[f64], &mut R) -> Vec<f64>,
    R: Rng + ?Sized,
{
    if m == 0 || budget == 0 {
        return Err(Error::InvalidArgument("need m >= 1 and budget >= 1".into()));
    }
    let spec = layout.spec();
    let eps = spec.epsilon;
    if distance(&layout.achieved_goal(start), subgoal) <= eps {
        return Ok(1.0);
    }
    let mut hits = 0usize;
    for _ in 0..m {
        let mut s = start.to_vec();
        for _ in 0..budget {
            let a = spec.clamp_action(&policy(&s, subgoal, rng))?;
            s = layout.transition(&s, &a);
            if distance(&layout.achieved_goal(&s), subgoal) <= eps {
                hits += 1;
                break;
            }
        }
    }
    Ok(hits as f64 / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax_lowest(&[-5.0, -3.0, -9.0]), Some(1));
        assert_eq!(argmax_lowest(&[1.0, 2.0, 2.0]), Some(1));
        assert_eq!(argmax_lowest(&[]), None);
    }

    #[test]
    fn snap_to_goal() {
        let sel = choose_subgoal(
            vec![vec![1.0, 1.0], vec![1.01, 1.0]],
            vec![0.0, 1.0],
            &[1.0, 1.02],
            0.05,
            SelectorMode::Value,
        )
        .unwrap();
        assert!(sel.snapped);
        assert_eq!(sel.subgoal, vec![1.0, 1.02]);
        assert_eq!(sel.index, 1);
    }

    #[test]
    fn first_mode_ignores_values() {
        let sel = choose_subgoal(
            vec![vec![0.0], vec![5.0]],
            vec![],
            &[10.0],
            0.05,
            SelectorMode::First,
        )
        .unwrap();
        assert_eq!(sel.subgoal, vec![0.0]);
    }
}
