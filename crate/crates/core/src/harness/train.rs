//! Online training loop and greedy evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bootstrap::bootstrap_dataset;
use super::config::RunConfig;
use super::pretrain::{pretrain_existing, PretrainSettings};
use crate::envs::{make_layout, Env, Layout};
use crate::error::{shape_err, Error, Result};
use crate::nn::Checkpoint;
use crate::planner::{
    collect_rollout, GeneratorProposer, GoalProposer, LowLevelPolicy, PlannerConfig, SacPolicy,
};
use crate::replay::ReplayBuffer;
use crate::sac::{PolicyMode, Sac};
use crate::subgoal::{GeneratorLossReport, HindsightBatch, SubgoalGenerator};

pub const METRICS_HEADER: &str =
    "step,success_rate,mean_return,l_hy,l_hs,critic_loss,actor_loss,wall_time_s";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub l_hy: f64,
    pub l_hs: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub wall_time_s: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.success_rate,
            self.mean_return,
            self.l_hy,
            self.l_hs,
            self.critic_loss,
            self.actor_loss,
            self.wall_time_s
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(Error::Format(format!("metrics row needs 8 fields: `{line}`")));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::Format(format!("bad number `{}`", f[i])))
        };
        Ok(Self {
            step: f[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad step `{}`", f[0])))?,
            success_rate: num(1)?,
            mean_return: num(2)?,
            l_hy: num(3)?,
            l_hs: num(4)?,
            critic_loss: num(5)?,
            actor_loss: num(6)?,
            wall_time_s: num(7)?,
        })
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(Error::Format(format!(
                "{}: missing metrics header",
                path.as_ref().display()
            )))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRow::parse_csv_line)
        .collect()
}

/// Low-level learner plus (unless flat) the subgoal generator.
#[derive(Debug, Clone)]
pub struct Agent {
    pub sac: Sac,
    pub generator: Option<SubgoalGenerator>,
}

impl Agent {
    pub fn save(&self, env_id: &str, config_text: &str, path: impl AsRef<Path>) -> Result<()> {
        let mut ck = Checkpoint::new();
        self.sac.save_to(&mut ck, "sac");
        if let Some(g) = &self.generator {
            g.save_to(&mut ck, "generator");
        }
        ck.put_text("env", env_id);
        ck.put_text("config", config_text);
        ck.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let ck = Checkpoint::load(path)?;
        let sac = Sac::load_from(&ck, "sac")?;
        let generator = if ck.get("generator.meta").is_some() {
            Some(SubgoalGenerator::load_from(&ck, "generator")?)
        } else {
            None
        };
        let env = ck.text("env")?.to_string();
        Ok((Self { sac, generator }, env))
    }

    fn check_dims(&self, layout: &Layout) -> Result<()> {
        let spec = layout.spec();
        let ours = (self.sac.state_dim(), self.sac.goal_dim(), self.sac.action_dim());
        let theirs = (spec.state_dim, spec.goal_dim, spec.action_dim);
        if ours != theirs {
            return Err(shape_err(
                "checkpoint vs environment",
                format!("{theirs:?}"),
                format!("{ours:?}"),
            ));
        }
        if let Some(g) = &self.generator {
            if (g.state_dim(), g.goal_dim()) != (spec.state_dim, spec.goal_dim) {
                return Err(shape_err(
                    "generator vs environment",
                    format!("{:?}", (spec.state_dim, spec.goal_dim)),
                    format!("{:?}", (g.state_dim(), g.goal_dim())),
                ));
            }
        }
        Ok(())
    }
}

struct UniformPolicy<'a> {
    low: Vec<f64>,
    high: Vec<f64>,
    rng: &'a mut ChaCha8Rng,
}

impl LowLevelPolicy for UniformPolicy<'_> {
    fn act(&mut self, _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .low
            .iter()
            .zip(&self.high)
            .map(|(&l, &h)| self.rng.random_range(l..=h))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub success_rate: f64,
    pub mean_return: f64,
    pub episodes: usize,
}

/// Greedy episodes: mean actions and zero-noise candidates. Success means
/// the final goal was attained within the horizon.
pub fn evaluate(
    agent: &Agent,
    layout: &Layout,
    episodes: usize,
    seed: u64,
    planner: &PlannerConfig,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    agent.check_dims(layout)?;
    let mut cfg = planner.clone();
    cfg.zero_noise_candidates = true;
    cfg.log_decisions = false;
    cfg.flat = cfg.flat || agent.generator.is_none();
    let mut env = Env::new(layout.clone());
    env.reset(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut successes = 0usize;
    let mut total_return = 0.0;
    for _ in 0..episodes {
        env.reset_continue();
        let mut policy = SacPolicy {
            sac: &agent.sac,
            mode: PolicyMode::Mean,
            rng: &mut rng,
        };
        let rollout = match (&agent.generator, cfg.flat) {
            (Some(g), false) => {
                let mut proposer = GeneratorProposer {
                    generator: g,
                    sac: &agent.sac,
                    rng: &mut prng,
                };
                collect_rollout(&mut env, &mut policy, &mut proposer, &cfg)?
            }
            _ => collect_rollout(&mut env, &mut policy, &mut GoalProposer, &cfg)?,
        };
        successes += usize::from(rollout.success);
        total_return += rollout.episode_return;
    }
    Ok(EvalSummary {
        success_rate: successes as f64 / episodes as f64,
        mean_return: total_return / episodes as f64,
        episodes,
    })
}

/// Everything one seed produces.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub agent: Agent,
    pub pretrain_curve: Vec<GeneratorLossReport>,
    pub decision_log: Vec<String>,
    pub timing: Vec<(usize, f64)>,
}

fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(10_007)
}

fn initial_generator(
    cfg: &RunConfig,
    layout: &Layout,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(Option<SubgoalGenerator>, Vec<GeneratorLossReport>)> {
    if cfg.flat {
        return Ok((None, Vec::new()));
    }
    let spec = layout.spec();
    if let Some(path) = &cfg.generator {
        let ck = Checkpoint::load(path)?;
        let g = SubgoalGenerator::load_from(&ck, "generator")?;
        if (g.state_dim(), g.goal_dim()) != (spec.state_dim, spec.goal_dim) {
            return Err(shape_err(
                "pretrained generator",
                format!("{:?}", (spec.state_dim, spec.goal_dim)),
                format!("{:?}", (g.state_dim(), g.goal_dim())),
            ));
        }
        return Ok((Some(g), Vec::new()));
    }
    let mut g = SubgoalGenerator::new(spec.state_dim, spec.goal_dim, &cfg.generator_config(), rng)?;
    if cfg.bootstrap_episodes == 0 || cfg.pretrain_steps == 0 {
        return Ok((Some(g), Vec::new()));
    }
    let data = bootstrap_dataset(layout, cfg.bootstrap_episodes, cfg.bootstrap_noise, seed)?;
    let settings = PretrainSettings {
        steps: cfg.pretrain_steps,
        batch_trajectories: cfg.pretrain_batch,
        subgoal_count: cfg.subgoal_count,
        beta: cfg.effective_beta(),
        lr: cfg.pretrain_lr,
        seed,
    };
    let out = pretrain_existing(g, &data, &settings, rng)?;
    g = out.generator;
    g.reset_optimizer();
    Ok((Some(g), out.curve))
}

/// Train one seed in a single worker. `progress` sees every metrics row.
pub fn train_seed(
    cfg: &RunConfig,
    seed: u64,
    mut progress: Option<&mut dyn FnMut(&MetricsRow)>,
) -> Result<SeedRun> {
    cfg.validate()?;
    let clock = Instant::now();
    let layout = make_layout(&cfg.env, &cfg.env_overrides())?;
    let spec = layout.spec();
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut policy_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut planner_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut sample_rng = ChaCha8Rng::seed_from_u64(master.random());
    let env_seed: u64 = master.random();

    let sac = Sac::new(&spec, &cfg.sac_config(), &mut init_rng)?;
    let (generator, pretrain_curve) = initial_generator(cfg, &layout, seed, &mut init_rng)?;
    let mut agent = Agent { sac, generator };
    let planner = cfg.planner_config(spec.epsilon);
    let her = cfg.her()?;
    let beta = cfg.effective_beta();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, spec.epsilon)?;
    let mut env = Env::new(layout.clone());
    env.set_done_on_success(cfg.done_on_success);
    env.reset(env_seed);

    let mut last_gen = pretrain_curve.last().copied();
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    let mut decision_log = Vec::new();
    let mut critic_acc = (0.0, 0usize);
    let mut actor_acc = 0.0;
    let mut updates = 0usize;
    let mut credit = 0.0;
    let mut steps = 0usize;
    let mut next_eval = 0usize;

    let mut emit = |step: usize,
                    agent: &Agent,
                    last_gen: Option<GeneratorLossReport>,
                    critic_acc: &mut (f64, usize),
                    actor_acc: &mut f64,
                    rows: &mut Vec<MetricsRow>,
                    timing: &mut Vec<(usize, f64)>|
     -> Result<f64> {
        let ev = evaluate(agent, &layout, cfg.eval_episodes, eval_seed(seed), &planner)?;
        let n = critic_acc.1.max(1) as f64;
        let elapsed = clock.elapsed().as_secs_f64();
        let row = MetricsRow {
            step,
            success_rate: ev.success_rate,
            mean_return: ev.mean_return,
            l_hy: last_gen.map_or(0.0, |r| r.l_hy),
            l_hs: last_gen.map_or(0.0, |r| r.l_hs),
            critic_loss: critic_acc.0 / n,
            actor_loss: *actor_acc / n,
            wall_time_s: if cfg.record_wall_time { elapsed } else { 0.0 },
        };
        *critic_acc = (0.0, 0);
        *actor_acc = 0.0;
        if let Some(p) = progress.as_mut() {
            p(&row);
        }
        rows.push(row);
        timing.push((step, elapsed));
        Ok(ev.success_rate)
    };

    let mut stop = false;
    let eval_due = |steps: usize, next_eval: &mut usize| -> Option<usize> {
        if *next_eval <= cfg.total_steps && steps >= *next_eval {
            let at = *next_eval;
            *next_eval = if at == cfg.total_steps {
                usize::MAX
            } else {
                (at + cfg.eval_every).min(cfg.total_steps)
            };
            Some(at)
        } else {
            None
        }
    };

    while let Some(at) = eval_due(steps, &mut next_eval) {
        let sr = emit(at, &agent, last_gen, &mut critic_acc, &mut actor_acc, &mut rows, &mut timing)?;
        if cfg.stop_at_success.is_some_and(|t| sr >= t) {
            stop = true;
        }
    }

    while !stop && steps < cfg.total_steps {
        let rollout = {
            let warm = steps < cfg.warmup_steps;
            let mut uniform;
            let mut sac_policy;
            let policy: &mut dyn LowLevelPolicy = if warm {
                uniform = UniformPolicy {
                    low: spec.action_low.clone(),
                    high: spec.action_high.clone(),
                    rng: &mut policy_rng,
                };
                &mut uniform
            } else {
                sac_policy = SacPolicy {
                    sac: &agent.sac,
                    mode: PolicyMode::Stochastic,
                    rng: &mut policy_rng,
                };
                &mut sac_policy
            };
            env.reset_continue();
            match &agent.generator {
                Some(g) if !cfg.flat => {
                    let mut proposer = GeneratorProposer {
                        generator: g,
                        sac: &agent.sac,
                        rng: &mut planner_rng,
                    };
                    collect_rollout(&mut env, policy, &mut proposer, &planner)?
                }
                _ => collect_rollout(&mut env, policy, &mut GoalProposer, &planner)?,
            }
        };
        let len = rollout.trajectory.len();
        steps += len;
        if cfg.log_decisions {
            decision_log.extend(rollout.decision_log);
        }
        buffer.store(rollout.trajectory)?;

        if steps >= cfg.warmup_steps {
            credit += len as f64 * cfg.updates_per_step;
            while credit >= 1.0 {
                credit -= 1.0;
                let batch = buffer.sample_arrays(cfg.batch_size, her, &mut sample_rng)?;
                let losses = agent.sac.update(&batch, &mut sample_rng)?;
                critic_acc.0 += losses.critic;
                critic_acc.1 += 1;
                actor_acc += losses.actor;
                updates += 1;
                if updates % cfg.finetune_every == 0 {
                    if let Some(g) = agent.generator.as_mut() {
                        let refs: Vec<_> = buffer.trajectories().collect();
                        if let Some(hb) = HindsightBatch::sample(
                            &refs,
                            cfg.subgoal_count,
                            cfg.finetune_batch,
                            &mut sample_rng,
                        )? {
                            let batch = hb.into_batch();
                            last_gen = Some(g.update(&batch, beta, cfg.eisp_lr, &mut sample_rng)?);
                        }
                    }
                }
            }
        }

        while let Some(at) = eval_due(steps, &mut next_eval) {
            let sr = emit(at, &agent, last_gen, &mut critic_acc, &mut actor_acc, &mut rows, &mut timing)?;
            if cfg.stop_at_success.is_some_and(|t| sr >= t) {
                stop = true;
                break;
            }
        }
    }

    Ok(SeedRun {
        seed,
        rows,
        agent,
        pretrain_curve,
        decision_log,
        timing,
    })
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Write one seed's artifacts under `out/seed_<seed>/`.
pub fn write_seed_run(cfg: &RunConfig, run: &SeedRun, out: &Path) -> Result<PathBuf> {
    let dir = seed_dir(out, run.seed);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(&run.rows))?;
    let mut timing = String::from("step,elapsed_s\n");
    for (s, t) in &run.timing {
        let _ = writeln!(timing, "{s},{t:.3}");
    }
    fs::write(dir.join("timing.csv"), timing)?;
    if !run.pretrain_curve.is_empty() {
        let mut s = String::from("step,recon_nll,kl_term,l_hy,l_hs,total\n");
        for (i, r) in run.pretrain_curve.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{},{},{}", i + 1, r.recon_nll, r.kl_term, r.l_hy, r.l_hs, r.total);
        }
        fs::write(dir.join("pretrain_loss.csv"), s)?;
    }
    if cfg.log_decisions {
        fs::write(dir.join("decisions.log"), run.decision_log.join("\n") + "\n")?;
    }
    run.agent
        .save(&cfg.env, &cfg.to_text(), dir.join("checkpoint.bin"))?;
    Ok(dir)
}

/// Train every configured seed in turn and write the run directory.
pub fn train(cfg: &RunConfig) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    fs::write(cfg.out.join("seeds.txt"), format!("{}\n", cfg.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("\n")))?;
    fs::write(cfg.out.join("ablation.log"), cfg.effective_paths().join("\n") + "\n")?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let run = train_seed(cfg, seed, None)?;
        write_seed_run(cfg, &run, &cfg.out)?;
        runs.push(run);
    }
    Ok(runs)
}
