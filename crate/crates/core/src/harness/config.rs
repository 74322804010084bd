//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::envs::EnvOverrides;
use crate::error::{Error, Result};
use crate::nn::{Activation, Family};
use crate::planner::{PlannerConfig, SelectorMode};
use crate::replay::{HerMode, HerStrategy};
use crate::sac::SacConfig;
use crate::subgoal::GeneratorConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: String,
    pub seeds: Vec<u64>,
    pub eps: Option<f64>,
    pub horizon: Option<usize>,
    pub door_ys: Option<Vec<f64>>,
    pub done_on_success: bool,

    pub sac_lr: f64,
    pub eisp_lr: f64,
    pub pretrain_lr: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub sac_hidden: Vec<usize>,
    pub activation: Activation,

    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub her_mode: HerMode,
    pub relabel_ratio: f64,
    pub updates_per_step: f64,
    pub warmup_steps: usize,

    pub time_limit: usize,
    pub subgoal_count: usize,
    pub candidates: usize,
    pub beta: f64,
    pub generator_hidden: usize,
    pub family: Family,
    pub sigma_r: f64,
    pub finetune_every: usize,
    pub finetune_batch: usize,
    pub literal_mod_rule: bool,

    pub bootstrap_episodes: usize,
    pub bootstrap_noise: f64,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub generator: Option<PathBuf>,

    pub total_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub stop_at_success: Option<f64>,

    pub no_hindsight_sampler: bool,
    pub no_value_selector: bool,
    pub flat: bool,

    pub out: PathBuf,
    pub workers: usize,
    pub record_wall_time: bool,
    pub log_decisions: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "pointrooms-2".into(),
            seeds: vec![0],
            eps: None,
            horizon: None,
            door_ys: None,
            done_on_success: true,
            sac_lr: 3e-4,
            eisp_lr: 1e-5,
            pretrain_lr: 1e-3,
            alpha: 0.01,
            gamma: 0.99,
            tau: 0.005,
            sac_hidden: vec![64, 64],
            activation: Activation::Relu,
            buffer_capacity: 5000,
            batch_size: 128,
            her_mode: HerMode::Future,
            relabel_ratio: 0.8,
            updates_per_step: 0.25,
            warmup_steps: 1000,
            time_limit: 30,
            subgoal_count: 4,
            candidates: 16,
            beta: 1.0,
            generator_hidden: 64,
            family: Family::Laplace,
            sigma_r: 0.1,
            finetune_every: 10,
            finetune_batch: 32,
            literal_mod_rule: false,
            bootstrap_episodes: 3000,
            bootstrap_noise: 10.0,
            pretrain_steps: 2000,
            pretrain_batch: 64,
            generator: None,
            total_steps: 500_000,
            eval_every: 25_000,
            eval_episodes: 100,
            stop_at_success: None,
            no_hindsight_sampler: false,
            no_value_selector: false,
            flat: false,
            out: PathBuf::from("runs/default"),
            workers: 1,
            record_wall_time: false,
            log_decisions: false,
        }
    }
}

/// Empty text means unset.
fn optional<T>(v: &str, parse: impl FnOnce() -> Result<T>) -> Result<Option<T>> {
    if v.is_empty() {
        Ok(None)
    } else {
        parse().map(Some)
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got `{v}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "env" => self.env = v.to_string(),
            "seeds" => self.seeds = parse_list(key, v)?,
            "eps" => self.eps = optional(v, || parse_num(key, v))?,
            "horizon" => self.horizon = optional(v, || parse_num(key, v))?,
            "door_ys" => self.door_ys = optional(v, || parse_list(key, v))?,
            "done_on_success" => self.done_on_success = parse_bool(key, v)?,
            "sac_lr" => self.sac_lr = parse_num(key, v)?,
            "eisp_lr" => self.eisp_lr = parse_num(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse_num(key, v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "sac_hidden" => self.sac_hidden = parse_list(key, v)?,
            "activation" => self.activation = Activation::parse(v)?,
            "buffer_capacity" => self.buffer_capacity = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "her_mode" => self.her_mode = HerMode::parse(v)?,
            "relabel_ratio" => self.relabel_ratio = parse_num(key, v)?,
            "updates_per_step" => self.updates_per_step = parse_num(key, v)?,
            "warmup_steps" => self.warmup_steps = parse_num(key, v)?,
            "time_limit" => self.time_limit = parse_num(key, v)?,
            "subgoal_count" => self.subgoal_count = parse_num(key, v)?,
            "candidates" => self.candidates = parse_num(key, v)?,
            "beta" => self.beta = parse_num(key, v)?,
            "generator_hidden" => self.generator_hidden = parse_num(key, v)?,
            "family" => self.family = Family::parse(v)?,
            "sigma_r" => self.sigma_r = parse_num(key, v)?,
            "finetune_every" => self.finetune_every = parse_num(key, v)?,
            "finetune_batch" => self.finetune_batch = parse_num(key, v)?,
            "literal_mod_rule" => self.literal_mod_rule = parse_bool(key, v)?,
            "bootstrap_episodes" => self.bootstrap_episodes = parse_num(key, v)?,
            "bootstrap_noise" => self.bootstrap_noise = parse_num(key, v)?,
            "pretrain_steps" => self.pretrain_steps = parse_num(key, v)?,
            "pretrain_batch" => self.pretrain_batch = parse_num(key, v)?,
            "generator" => {
                self.generator = if v.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(v))
                }
            }
            "total_steps" => self.total_steps = parse_num(key, v)?,
            "eval_every" => self.eval_every = parse_num(key, v)?,
            "eval_episodes" => self.eval_episodes = parse_num(key, v)?,
            "stop_at_success" => self.stop_at_success = optional(v, || parse_num(key, v))?,
            "no_hindsight_sampler" => self.no_hindsight_sampler = parse_bool(key, v)?,
            "no_value_selector" => self.no_value_selector = parse_bool(key, v)?,
            "flat" => self.flat = parse_bool(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "workers" => self.workers = parse_num(key, v)?,
            "record_wall_time" => self.record_wall_time = parse_bool(key, v)?,
            "log_decisions" => self.log_decisions = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |o: Option<String>| o.unwrap_or_default();
        let lines: Vec<(&str, String)> = vec![
            ("env", self.env.clone()),
            ("seeds", join(&self.seeds)),
            ("eps", opt(self.eps.map(|e| e.to_string()))),
            ("horizon", opt(self.horizon.map(|e| e.to_string()))),
            ("door_ys", opt(self.door_ys.as_ref().map(|d| join(d)))),
            ("done_on_success", self.done_on_success.to_string()),
            ("sac_lr", self.sac_lr.to_string()),
            ("eisp_lr", self.eisp_lr.to_string()),
            ("pretrain_lr", self.pretrain_lr.to_string()),
            ("alpha", self.alpha.to_string()),
            ("gamma", self.gamma.to_string()),
            ("tau", self.tau.to_string()),
            ("sac_hidden", join(&self.sac_hidden)),
            ("activation", self.activation.name().into()),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("her_mode", self.her_mode.name().into()),
            ("relabel_ratio", self.relabel_ratio.to_string()),
            ("updates_per_step", self.updates_per_step.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("time_limit", self.time_limit.to_string()),
            ("subgoal_count", self.subgoal_count.to_string()),
            ("candidates", self.candidates.to_string()),
            ("beta", self.beta.to_string()),
            ("generator_hidden", self.generator_hidden.to_string()),
            ("family", self.family.name().into()),
            ("sigma_r", self.sigma_r.to_string()),
            ("finetune_every", self.finetune_every.to_string()),
            ("finetune_batch", self.finetune_batch.to_string()),
            ("literal_mod_rule", self.literal_mod_rule.to_string()),
            ("bootstrap_episodes", self.bootstrap_episodes.to_string()),
            ("bootstrap_noise", self.bootstrap_noise.to_string()),
            ("pretrain_steps", self.pretrain_steps.to_string()),
            ("pretrain_batch", self.pretrain_batch.to_string()),
            (
                "generator",
                opt(self.generator.as_ref().map(|p| p.display().to_string())),
            ),
            ("total_steps", self.total_steps.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("stop_at_success", opt(self.stop_at_success.map(|e| e.to_string()))),
            ("no_hindsight_sampler", self.no_hindsight_sampler.to_string()),
            ("no_value_selector", self.no_value_selector.to_string()),
            ("flat", self.flat.to_string()),
            ("out", self.out.display().to_string()),
            ("workers", self.workers.to_string()),
            ("record_wall_time", self.record_wall_time.to_string()),
            ("log_decisions", self.log_decisions.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sac_lr", self.sac_lr),
            ("eisp_lr", self.eisp_lr),
            ("pretrain_lr", self.pretrain_lr),
            ("sigma_r", self.sigma_r),
        ];
        for (k, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1)".into()));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.relabel_ratio) {
            return Err(Error::Config("tau and relabel_ratio must lie in [0, 1]".into()));
        }
        if !(self.updates_per_step >= 0.0) {
            return Err(Error::Config("updates_per_step must be >= 0".into()));
        }
        let nonzero = [
            ("buffer_capacity", self.buffer_capacity),
            ("batch_size", self.batch_size),
            ("time_limit", self.time_limit),
            ("candidates", self.candidates),
            ("generator_hidden", self.generator_hidden),
            ("finetune_every", self.finetune_every),
            ("finetune_batch", self.finetune_batch),
            ("pretrain_batch", self.pretrain_batch),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
            ("workers", self.workers),
        ];
        for (k, v) in nonzero {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be >= 1")));
            }
        }
        if self.subgoal_count < 2 {
            return Err(Error::Config("subgoal_count must be >= 2".into()));
        }
        if self.sac_hidden.is_empty() || self.sac_hidden.contains(&0) {
            return Err(Error::Config("sac_hidden must list positive sizes".into()));
        }
        if let Some(s) = self.stop_at_success {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::Config("stop_at_success must lie in (0, 1]".into()));
            }
        }
        if self.workers != 1 {
            return Err(Error::Config(
                "only single-worker collection is implemented (workers = 1)".into(),
            ));
        }
        crate::envs::make_layout(&self.env, &self.env_overrides())?;
        Ok(())
    }

    pub fn env_overrides(&self) -> EnvOverrides {
        EnvOverrides {
            epsilon: self.eps,
            horizon: self.horizon,
            door_ys: self.door_ys.clone(),
            wall: None,
        }
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            hidden: self.sac_hidden.clone(),
            activation: self.activation,
            alpha: self.alpha,
            gamma: self.gamma,
            tau: self.tau,
            actor_lr: self.sac_lr,
            critic_lr: self.sac_lr,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            hidden: self.generator_hidden,
            activation: self.activation,
            family: self.family,
            sigma_r: self.sigma_r,
        }
    }

    pub fn her(&self) -> Result<HerStrategy> {
        HerStrategy::new(self.her_mode, self.relabel_ratio)
    }

    /// β after ablations.
    pub fn effective_beta(&self) -> f64 {
        if self.no_hindsight_sampler {
            0.0
        } else {
            self.beta
        }
    }

    pub fn planner_config(&self, snap_eps: f64) -> PlannerConfig {
        PlannerConfig {
            time_limit: self.time_limit,
            subgoal_count: self.subgoal_count,
            candidates: self.candidates,
            snap_eps,
            zero_noise_candidates: false,
            selector: if self.no_value_selector {
                SelectorMode::First
            } else {
                SelectorMode::Value
            },
            literal_mod_rule: self.literal_mod_rule,
            flat: self.flat,
            log_decisions: self.log_decisions,
        }
    }

    /// Settings that ablation flags touch, as `name=value` lines.
    pub fn effective_paths(&self) -> Vec<String> {
        vec![
            format!("beta_effective={}", self.effective_beta()),
            format!(
                "selector={}",
                if self.no_value_selector { "first" } else { "value" }
            ),
            format!("planner={}", if self.flat { "flat" } else { "subgoal" }),
        ]
    }

    pub fn apply_ablation(&mut self, name: &str) -> Result<()> {
        match name {
            "no-hs" => self.no_hindsight_sampler = true,
            "no-vs" => self.no_value_selector = true,
            "flat" => self.flat = true,
            other => return Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
        Ok(())
    }
}
