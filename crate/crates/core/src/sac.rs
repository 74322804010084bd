//! Goal-conditioned soft actor-critic with a tanh-squashed Gaussian policy
//! and twin critics.

use std::f64::consts::LN_2;

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envs::EnvSpec;
use crate::error::{shape_err, Error, Result};
use crate::nn::dist::{log_prob_on_tape, scale_from_raw, scale_on_tape, HALF_LN_2PI};
use crate::nn::tape::softplus;
use crate::nn::{Activation, AdamConfig, AdamState, Checkpoint, DenseNet, Family, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            alpha: 0.01,
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    Stochastic,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacLosses {
    pub critic: f64,
    pub actor: f64,
}

#[derive(Debug, Clone)]
pub struct Sac {
    pub actor: DenseNet,
    pub q1: DenseNet,
    pub q2: DenseNet,
    pub q1_target: DenseNet,
    pub q2_target: DenseNet,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    actor_opt: AdamState,
    critic_opt: AdamState,
    state_dim: usize,
    goal_dim: usize,
    action_dim: usize,
    action_center: Array2<f64>,
    action_half: Array2<f64>,
}

fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// `ln(1 − tanh²u) = 2(ln 2 − u − softplus(−2u))`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

impl Sac {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, config: &SacConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (sd, gd, ad) = (spec.state_dim, spec.goal_dim, spec.action_dim);
        let sizes = |input: usize, output: usize| {
            let mut v = vec![input];
            v.extend_from_slice(&config.hidden);
            v.push(output);
            v
        };
        let actor = DenseNet::new(&sizes(sd + gd, 2 * ad), config.activation, rng)?;
        let q1 = DenseNet::new(&sizes(sd + gd + ad, 1), config.activation, rng)?;
        let q2 = DenseNet::new(&sizes(sd + gd + ad, 1), config.activation, rng)?;
        let action_center = Array2::from_shape_fn((1, ad), |(_, j)| {
            0.5 * (spec.action_low[j] + spec.action_high[j])
        });
        let action_half = Array2::from_shape_fn((1, ad), |(_, j)| {
            0.5 * (spec.action_high[j] - spec.action_low[j])
        });
        let actor_opt = AdamState::new(actor.params(), AdamConfig::default());
        let critic_opt = AdamState::new(
            q1.params().into_iter().chain(q2.params()),
            AdamConfig::default(),
        );
        Ok(Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            alpha: config.alpha,
            gamma: config.gamma,
            tau: config.tau,
            actor_lr: config.actor_lr,
            critic_lr: config.critic_lr,
            actor_opt,
            critic_opt,
            state_dim: sd,
            goal_dim: gd,
            action_dim: ad,
            action_center,
            action_half,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn goal_dim(&self) -> usize {
        self.goal_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn log_half_sum(&self) -> f64 {
        self.action_half.iter().map(|h| h.ln()).sum()
    }

    fn check_inputs(&self, states: &Array2<f64>, goals: &Array2<f64>) -> Result<()> {
        if states.ncols() != self.state_dim {
            return Err(shape_err("sac state", self.state_dim, states.ncols()));
        }
        if goals.ncols() != self.goal_dim {
            return Err(shape_err("sac goal", self.goal_dim, goals.ncols()));
        }
        if goals.nrows() != states.nrows() {
            return Err(shape_err("sac batch rows", states.nrows(), goals.nrows()));
        }
        Ok(())
    }

    /// Squashed actions and their log-densities for standard-normal `noise`
    /// (zero noise gives the mean action).
    pub fn actions_with_noise(
        &self,
        states: &Array2<f64>,
        goals: &Array2<f64>,
        noise: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_inputs(states, goals)?;
        let n = states.nrows();
        let ad = self.action_dim;
        if noise.dim() != (n, ad) {
            return Err(shape_err("sac noise", format!("{n}x{ad}"), format!("{:?}", noise.dim())));
        }
        let out = self
            .actor
            .forward_batch(&concatenate![Axis(1), *states, *goals])?;
        let mut actions = Array2::zeros((n, ad));
        let mut logp = Array2::zeros((n, 1));
        let log_half = self.log_half_sum();
        for i in 0..n {
            let mut lp = -log_half;
            for j in 0..ad {
                let mu = out[[i, j]];
                let std = scale_from_raw(out[[i, ad + j]]);
                let eps = noise[[i, j]];
                let u = mu + std * eps;
                lp += -0.5 * eps * eps - std.ln() - HALF_LN_2PI - log_one_minus_tanh_sq(u);
                actions[[i, j]] = self.action_center[[0, j]] + self.action_half[[0, j]] * u.tanh();
            }
            logp[[i, 0]] = lp;
        }
        Ok((actions, logp))
    }

    pub fn policy_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        goal: &[f64],
        mode: PolicyMode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64)> {
        let s = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("row");
        let g = Array2::from_shape_vec((1, goal.len()), goal.to_vec()).expect("row");
        let noise = match mode {
            PolicyMode::Stochastic => standard_normal(1, self.action_dim, rng),
            PolicyMode::Mean => Array2::zeros((1, self.action_dim)),
        };
        let (a, lp) = self.actions_with_noise(&s, &g, &noise)?;
        Ok((a.row(0).to_vec(), lp[[0, 0]]))
    }

    fn min_q(
        q1: &DenseNet,
        q2: &DenseNet,
        states: &Array2<f64>,
        goals: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        let x = concatenate![Axis(1), *states, *goals, *actions];
        let a = q1.forward_batch(&x)?;
        let b = q2.forward_batch(&x)?;
        Ok(ndarray::Zip::from(&a).and(&b).map_collect(|&x, &y| x.min(y)))
    }

    /// `V(s, g) = min Q(s, g, ā) − α·log π(ā | s, g)` at the mean action `ā`.
    pub fn state_values(&self, states: &Array2<f64>, goals: &Array2<f64>) -> Result<Vec<f64>> {
        let zero = Array2::zeros((states.nrows(), self.action_dim));
        let (a, lp) = self.actions_with_noise(states, goals, &zero)?;
        let q = Self::min_q(&self.q1, &self.q2, states, goals, &a)?;
        Ok((0..states.nrows())
            .map(|i| q[[i, 0]] - self.alpha * lp[[i, 0]])
            .collect())
    }

    pub fn state_value(&self, state: &[f64], goal: &[f64]) -> Result<f64> {
        let s = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("row");
        let g = Array2::from_shape_vec((1, goal.len()), goal.to_vec()).expect("row");
        Ok(self.state_values(&s, &g)?[0])
    }

    /// Values of many candidate goals from one state.
    pub fn candidate_values(&self, state: &[f64], candidates: &[Vec<f64>]) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let k = candidates.len();
        let mut s = Array2::zeros((k, state.len()));
        let mut g = Array2::zeros((k, self.goal_dim));
        for (i, c) in candidates.iter().enumerate() {
            if c.len() != self.goal_dim {
                return Err(shape_err("candidate goal", self.goal_dim, c.len()));
            }
            s.row_mut(i).assign(&ndarray::ArrayView1::from(state));
            g.row_mut(i).assign(&ndarray::ArrayView1::from(c.as_slice()));
        }
        self.state_values(&s, &g)
    }

    pub fn q_values(
        &self,
        states: &Array2<f64>,
        goals: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let x = concatenate![Axis(1), *states, *goals, *actions];
        Ok((self.q1.forward_batch(&x)?, self.q2.forward_batch(&x)?))
    }

    /// Critic regression targets for a given next-action noise draw.
    pub fn compute_targets(
        &self,
        rewards: &Array2<f64>,
        next_states: &Array2<f64>,
        goals: &Array2<f64>,
        dones: &Array2<f64>,
        next_noise: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        let (a2, lp2) = self.actions_with_noise(next_states, goals, next_noise)?;
        let q = Self::min_q(&self.q1_target, &self.q2_target, next_states, goals, &a2)?;
        let n = rewards.nrows();
        let y = Array2::from_shape_fn((n, 1), |(i, _)| {
            rewards[[i, 0]]
                + self.gamma * (1.0 - dones[[i, 0]]) * (q[[i, 0]] - self.alpha * lp2[[i, 0]])
        });
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("critic target"));
        }
        Ok(y)
    }

    /// Squashed reparameterised actions on the tape; returns `(action, logπ)`.
    fn actor_on_tape(
        &self,
        tape: &mut Tape,
        actor_vars: &crate::nn::BoundNet,
        sg: Var,
        noise: &Array2<f64>,
    ) -> Result<(Var, Var)> {
        let ad = self.action_dim;
        let out = actor_vars.forward(tape, sg)?;
        let mu = tape.slice_cols(out, 0, ad)?;
        let raw = tape.slice_cols(out, ad, 2 * ad)?;
        let std = scale_on_tape(tape, raw);
        let spread = tape.mul_const(std, noise.clone())?;
        let u = tape.add(mu, spread)?;
        let lp_u = log_prob_on_tape(tape, Family::Normal, mu, std, u)?;
        // ln(1 − tanh²u) = 2(ln2 − u − softplus(−2u))
        let m2u = tape.scale(u, -2.0);
        let sp = tape.softplus(m2u);
        let inner = tape.add(u, sp)?;
        let corr = tape.scale(inner, -2.0);
        let corr = tape.shift(corr, 2.0 * LN_2);
        let corr = tape.row_sum(corr);
        let lp = tape.sub(lp_u, corr)?;
        let lp = tape.shift(lp, -self.log_half_sum());
        let t = tape.tanh(u);
        let a = tape.mul_const(t, self.action_half.clone())?;
        let a = tape.add_const(a, self.action_center.clone())?;
        Ok((a, lp))
    }

    pub fn critic_update_with_noise(
        &mut self,
        batch: &crate::replay::BatchArrays,
        next_noise: &Array2<f64>,
    ) -> Result<f64> {
        let y = self.compute_targets(
            &batch.rewards,
            &batch.next_states,
            &batch.goals,
            &batch.dones,
            next_noise,
        )?;
        let mut tape = Tape::new();
        let b1 = self.q1.bind(&mut tape, true);
        let b2 = self.q2.bind(&mut tape, true);
        let x = tape.constant(concatenate![Axis(1), batch.states, batch.goals, batch.actions]);
        let yv = tape.constant(y);
        let q1 = b1.forward(&mut tape, x)?;
        let q2 = b2.forward(&mut tape, x)?;
        let d1 = tape.sub(q1, yv)?;
        let d2 = tape.sub(q2, yv)?;
        let s1 = tape.square(d1);
        let s2 = tape.square(d2);
        let m1 = tape.mean(s1);
        let m2 = tape.mean(s2);
        let total = tape.add(m1, m2)?;
        let loss = tape.scale(total, 0.5);
        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite("critic loss"));
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Array2<f64>> = b1
            .vars()
            .iter()
            .chain(b2.vars())
            .map(|&v| grads.wrt(v))
            .collect();
        let names: Vec<String> = self
            .q1
            .param_names("q1")
            .into_iter()
            .chain(self.q2.param_names("q2"))
            .collect();
        {
            let mut params: Vec<&mut Array2<f64>> = self.q1.params_mut();
            params.extend(self.q2.params_mut());
            self.critic_opt.step(&mut params, &g, &names, self.critic_lr)?;
        }
        self.q1_target.soft_update_from(&self.q1, self.tau)?;
        self.q2_target.soft_update_from(&self.q2, self.tau)?;
        Ok(value)
    }

    pub fn actor_update_with_noise(
        &mut self,
        states: &Array2<f64>,
        goals: &Array2<f64>,
        noise: &Array2<f64>,
    ) -> Result<f64> {
        self.check_inputs(states, goals)?;
        let mut tape = Tape::new();
        let ba = self.actor.bind(&mut tape, true);
        let b1 = self.q1.bind(&mut tape, false);
        let b2 = self.q2.bind(&mut tape, false);
        let sg_data = concatenate![Axis(1), *states, *goals];
        let sg = tape.constant(sg_data.clone());
        let (a, lp) = self.actor_on_tape(&mut tape, &ba, sg, noise)?;
        let x = tape.concat(&[sg, a])?;
        let q1 = b1.forward(&mut tape, x)?;
        let q2 = b2.forward(&mut tape, x)?;
        let q = tape.min(q1, q2)?;
        let ent = tape.scale(lp, self.alpha);
        let per = tape.sub(ent, q)?;
        let loss = tape.mean(per);
        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite("actor loss"));
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Array2<f64>> = ba.vars().iter().map(|&v| grads.wrt(v)).collect();
        let names = self.actor.param_names("actor");
        let mut params = self.actor.params_mut();
        self.actor_opt.step(&mut params, &g, &names, self.actor_lr)?;
        Ok(value)
    }

    /// One critic step then one actor step on the same batch.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &crate::replay::BatchArrays,
        rng: &mut R,
    ) -> Result<SacLosses> {
        let n = batch.len();
        let next_noise = standard_normal(n, self.action_dim, rng);
        let critic = self.critic_update_with_noise(batch, &next_noise)?;
        let noise = standard_normal(n, self.action_dim, rng);
        let actor = self.actor_update_with_noise(&batch.states, &batch.goals, &noise)?;
        Ok(SacLosses { critic, actor })
    }

    /// Mean and scale of the pre-squash Gaussian for one input.
    pub fn policy_params(&self, state: &[f64], goal: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut x = state.to_vec();
        x.extend_from_slice(goal);
        let out = self.actor.forward(&x)?;
        let ad = self.action_dim;
        let mu = out[..ad].to_vec();
        let std = out[ad..].iter().map(|&r| scale_from_raw(r)).collect();
        Ok((mu, std))
    }

    pub fn save_to(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.put_net(&format!("{prefix}.actor"), &self.actor);
        ck.put_net(&format!("{prefix}.q1"), &self.q1);
        ck.put_net(&format!("{prefix}.q2"), &self.q2);
        ck.put_net(&format!("{prefix}.q1_target"), &self.q1_target);
        ck.put_net(&format!("{prefix}.q2_target"), &self.q2_target);
        ck.put_adam(&format!("{prefix}.actor_opt"), &self.actor_opt);
        ck.put_adam(&format!("{prefix}.critic_opt"), &self.critic_opt);
        let mut bounds = self.action_center.clone();
        bounds.append(Axis(0), self.action_half.view()).expect("same width");
        ck.put_array(format!("{prefix}.action_bounds"), &bounds);
        ck.put_array(
            format!("{prefix}.hyper"),
            &Array2::from_shape_vec(
                (1, 5),
                vec![self.alpha, self.gamma, self.tau, self.actor_lr, self.critic_lr],
            )
            .expect("five values"),
        );
        ck.put_u64(
            format!("{prefix}.dims"),
            vec![self.state_dim as u64, self.goal_dim as u64, self.action_dim as u64],
        );
    }

    pub fn load_from(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let dims = ck.u64s(&format!("{prefix}.dims"))?;
        if dims.len() != 3 {
            return Err(Error::Format("bad sac dims".into()));
        }
        let hyper = ck.array(&format!("{prefix}.hyper"))?;
        let bounds = ck.array(&format!("{prefix}.action_bounds"))?;
        if hyper.dim() != (1, 5) || bounds.nrows() != 2 {
            return Err(Error::Format("bad sac hyperparameters".into()));
        }
        Ok(Self {
            actor: ck.net(&format!("{prefix}.actor"))?,
            q1: ck.net(&format!("{prefix}.q1"))?,
            q2: ck.net(&format!("{prefix}.q2"))?,
            q1_target: ck.net(&format!("{prefix}.q1_target"))?,
            q2_target: ck.net(&format!("{prefix}.q2_target"))?,
            alpha: hyper[[0, 0]],
            gamma: hyper[[0, 1]],
            tau: hyper[[0, 2]],
            actor_lr: hyper[[0, 3]],
            critic_lr: hyper[[0, 4]],
            actor_opt: ck.adam(&format!("{prefix}.actor_opt"))?,
            critic_opt: ck.adam(&format!("{prefix}.critic_opt"))?,
            state_dim: dims[0] as usize,
            goal_dim: dims[1] as usize,
            action_dim: dims[2] as usize,
            action_center: bounds.slice(s![0..1, ..]).to_owned(),
            action_half: bounds.slice(s![1..2, ..]).to_owned(),
        })
    }
}
