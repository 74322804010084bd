use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eisp::envs::make_layout;
use eisp::harness::{
    bootstrap_dataset, evaluate, pretrain_generator, report, train, Agent, PretrainSettings, RunConfig,
};
use eisp::nn::Checkpoint;
use eisp::replay::Dataset;
use eisp::{Error, Result};

#[derive(Parser)]
#[command(name = "eisp", about = "Explicit-implicit subgoal planning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed list; repeatable.
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// no-hs, no-vs or flat; repeatable.
    #[arg(long)]
    ablation: Vec<String>,
    /// Extra `key=value` overrides applied last.
    #[arg(long = "set")]
    sets: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if !self.seed.is_empty() {
            cfg.seeds = self.seed.clone();
        }
        if let Some(env) = &self.env {
            cfg.env = env.clone();
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        for a in &self.ablation {
            cfg.apply_ablation(a)?;
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the scripted controller and save a dataset.
    Bootstrap(Common),
    /// Fit the generator offline on a dataset.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Dataset file; bootstraps in-process when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Online training for every seed.
    Train(Common),
    /// Greedy evaluation of saved checkpoints.
    Eval {
        #[command(flatten)]
        common: Common,
        /// A checkpoint file or a run directory holding seed_*/checkpoint.bin.
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Averaged curves and plots over run directories.
    Report {
        #[arg(long)]
        out: PathBuf,
        runs: Vec<PathBuf>,
    },
}

fn checkpoint_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path().join("checkpoint.bin")))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no checkpoints under {}", path.display())));
    }
    Ok(files)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bootstrap(common) => {
            let cfg = common.config()?;
            let layout = make_layout(&cfg.env, &cfg.env_overrides())?;
            std::fs::create_dir_all(&cfg.out)?;
            for &seed in &cfg.seeds {
                let data = bootstrap_dataset(&layout, cfg.bootstrap_episodes, cfg.bootstrap_noise, seed)?;
                let path = cfg.out.join(format!("dataset_{seed}.bin"));
                data.save(&path)?;
                println!(
                    "{}: {} episodes, scripted success {:.3}",
                    path.display(),
                    data.trajectories.len(),
                    data.success_rate
                );
            }
        }
        Command::Pretrain { common, dataset } => {
            let cfg = common.config()?;
            std::fs::create_dir_all(&cfg.out)?;
            for &seed in &cfg.seeds {
                let data = match &dataset {
                    Some(p) => Dataset::load(p)?,
                    None => {
                        let layout = make_layout(&cfg.env, &cfg.env_overrides())?;
                        bootstrap_dataset(&layout, cfg.bootstrap_episodes, cfg.bootstrap_noise, seed)?
                    }
                };
                let settings = PretrainSettings {
                    steps: cfg.pretrain_steps,
                    batch_trajectories: cfg.pretrain_batch,
                    subgoal_count: cfg.subgoal_count,
                    beta: cfg.effective_beta(),
                    lr: cfg.pretrain_lr,
                    seed,
                };
                let outcome = pretrain_generator(&data, &cfg.generator_config(), &settings)?;
                let mut ck = Checkpoint::new();
                outcome.generator.save_to(&mut ck, "generator");
                ck.put_text("env", data.env_id.clone());
                let path = cfg.out.join(format!("generator_{seed}.bin"));
                ck.save(&path)?;
                std::fs::write(cfg.out.join(format!("pretrain_loss_{seed}.csv")), outcome.curve_csv())?;
                if let Some(last) = outcome.curve.last() {
                    println!("{}: final L_HY {:.4}, L_HS {:.4}", path.display(), last.l_hy, last.l_hs);
                }
            }
        }
        Command::Train(common) => {
            let cfg = common.config()?;
            for run in train(&cfg)? {
                let last = run.rows.last().map_or(0.0, |r| r.success_rate);
                println!("seed {}: final success {:.3}", run.seed, last);
            }
            println!("wrote {}", cfg.out.display());
        }
        Command::Eval { common, checkpoints } => {
            let cfg = common.config()?;
            for path in checkpoint_files(&checkpoints)? {
                let (agent, env_id) = Agent::load(&path)?;
                let env_id = common.env.clone().unwrap_or(env_id);
                let layout = make_layout(&env_id, &cfg.env_overrides())?;
                let planner = cfg.planner_config(layout.spec().epsilon);
                for &seed in &cfg.seeds {
                    let ev = evaluate(&agent, &layout, cfg.eval_episodes, seed, &planner)?;
                    println!(
                        "{} seed {}: success {:.3}, mean return {:.2} over {} episodes",
                        path.display(),
                        seed,
                        ev.success_rate,
                        ev.mean_return,
                        ev.episodes
                    );
                }
            }
        }
        Command::Report { out, runs } => {
            for (label, fin) in report(&runs, &out)? {
                println!("{label}: final success {fin:.3}");
            }
            println!("wrote {}", out.join("success.svg").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eisp: {e}");
            ExitCode::FAILURE
        }
    }
}
