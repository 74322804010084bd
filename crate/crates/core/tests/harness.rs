use std::fs;
use std::path::Path;
use std::process::Command;

use eisp::envs::{make_layout, EnvOverrides};
use eisp::harness::*;
use eisp::planner::{PlannerConfig, SelectorMode};
use eisp::replay::Dataset;
use eisp::subgoal::GeneratorConfig;
use proptest::prelude::*;

fn tiny(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("env", "pointrooms-1"),
        ("sac_hidden", "16,16"),
        ("generator_hidden", "16"),
        ("total_steps", "1500"),
        ("eval_every", "500"),
        ("eval_episodes", "4"),
        ("warmup_steps", "300"),
        ("bootstrap_episodes", "40"),
        ("pretrain_steps", "20"),
        ("pretrain_batch", "8"),
        ("batch_size", "32"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.out = out.to_path_buf();
    cfg
}

fn eisp_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eisp"))
}

#[test]
fn metrics_header_is_exact() {
    assert_eq!(
        METRICS_HEADER,
        "step,success_rate,mean_return,l_hy,l_hs,critic_loss,actor_loss,wall_time_s"
    );
    assert!(metrics_csv(&[]).starts_with(METRICS_HEADER));
}

#[test]
fn training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for run in ["a", "b"] {
        let cfg = tiny(&dir.path().join(run));
        train(&cfg).unwrap();
        texts.push(fs::read(dir.path().join(run).join("seed_0/metrics.csv")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    let rows = read_metrics(dir.path().join("a/seed_0/metrics.csv")).unwrap();
    let steps: Vec<usize> = rows.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 500, 1000, 1500]);
    assert!(rows.iter().all(|r| r.wall_time_s == 0.0));
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.success_rate)));
}

#[test]
fn different_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let a = train_seed(&cfg, 0, None).unwrap();
    let b = train_seed(&cfg, 1, None).unwrap();
    assert_ne!(metrics_csv(&a.rows), metrics_csv(&b.rows));
}

#[test]
fn flat_rows_carry_no_generator_losses() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.apply_ablation("flat").unwrap();
    let run = train_seed(&cfg, 3, None).unwrap();
    assert!(run.agent.generator.is_none());
    assert!(run.rows.iter().all(|r| r.l_hy == 0.0 && r.l_hs == 0.0));
}

#[test]
fn ablations_touch_only_their_setting() {
    let base = RunConfig::default();
    let mut hs = base.clone();
    hs.apply_ablation("no-hs").unwrap();
    assert_eq!(hs.effective_beta(), 0.0);
    assert_eq!(hs.planner_config(0.05).selector, SelectorMode::Value);
    let mut vs = base.clone();
    vs.apply_ablation("no-vs").unwrap();
    assert_eq!(vs.effective_beta(), base.beta);
    assert_eq!(vs.planner_config(0.05).selector, SelectorMode::First);
    assert!(base.clone().apply_ablation("no-such").is_err());
}

#[test]
fn evaluation_needs_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let run = train_seed(&cfg, 0, None).unwrap();
    let layout = make_layout("pointrooms-1", &EnvOverrides::default()).unwrap();
    let planner = PlannerConfig::default();
    assert!(evaluate(&run.agent, &layout, 0, 1, &planner).is_err());
    let ev = evaluate(&run.agent, &layout, 3, 1, &planner).unwrap();
    assert_eq!(ev.episodes, 3);
    let wrong = make_layout("pointrooms-3", &EnvOverrides::default()).unwrap();
    assert!(evaluate(&run.agent, &wrong, 3, 1, &planner).is_err());
}

#[test]
fn checkpoint_reloads_for_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    train(&cfg).unwrap();
    let (agent, env_id) = Agent::load(dir.path().join("seed_0/checkpoint.bin")).unwrap();
    assert_eq!(env_id, "pointrooms-1");
    assert!(agent.generator.is_some());
    let layout = make_layout(&env_id, &EnvOverrides::default()).unwrap();
    let a = evaluate(&agent, &layout, 5, 9, &PlannerConfig::default()).unwrap();
    let b = evaluate(&agent, &layout, 5, 9, &PlannerConfig::default()).unwrap();
    assert_eq!(a.success_rate, b.success_rate);
    assert_eq!(a.mean_return, b.mean_return);
}

#[test]
fn scripted_success_on_three_rooms_is_weak_but_nonzero() {
    let layout = make_layout("pointrooms-3", &EnvOverrides::default()).unwrap();
    let noise = RunConfig::default().bootstrap_noise;
    let data = bootstrap_dataset(&layout, 500, noise, 0).unwrap();
    assert!(
        (0.05..=0.5).contains(&data.success_rate),
        "scripted success {}",
        data.success_rate
    );
}

#[test]
fn bootstrap_is_deterministic_and_round_trips() {
    let layout = make_layout("pointrooms-2", &EnvOverrides::default()).unwrap();
    let a = bootstrap_dataset(&layout, 20, 2.0, 4).unwrap();
    let b = bootstrap_dataset(&layout, 20, 2.0, 4).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(Dataset::from_bytes(&a.to_bytes()).unwrap().to_bytes(), a.to_bytes());
    assert!(bootstrap_dataset(&layout, 5, -1.0, 0).is_err());
}

#[test]
fn pretraining_rejects_empty_data() {
    let layout = make_layout("pointrooms-1", &EnvOverrides::default()).unwrap();
    let empty = bootstrap_dataset(&layout, 0, 1.0, 0).unwrap();
    let settings = PretrainSettings {
        steps: 5,
        batch_trajectories: 4,
        subgoal_count: 4,
        beta: 1.0,
        lr: 1e-3,
        seed: 0,
    };
    assert!(pretrain_generator(&empty, &GeneratorConfig::default(), &settings).is_err());
}

#[test]
fn report_writes_summary_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&dir.path().join("run"));
    cfg.seeds = vec![0, 1];
    train(&cfg).unwrap();
    let out = dir.path().join("report");
    let finals = report(&[dir.path().join("run")], &out).unwrap();
    assert_eq!(finals.len(), 1);
    let run = load_run(&dir.path().join("run")).unwrap();
    assert_eq!(run.seeds.len(), 2);
    let avg = average(&run);
    let last = avg.last().unwrap();
    let by_hand = run.seeds.iter().map(|(_, r)| r.last().unwrap().success_rate).sum::<f64>() / 2.0;
    assert!((last.mean_success - by_hand).abs() < 1e-12);
    assert!((finals[0].1 - by_hand).abs() < 1e-12);
    assert!(fs::read_to_string(out.join("summary.csv")).unwrap().lines().count() >= 2);
    assert!(fs::read_to_string(out.join("success.svg")).unwrap().contains("<svg"));
}

#[test]
fn config_text_round_trips() {
    let mut cfg = RunConfig::default();
    cfg.set("door_ys", "0.3").unwrap();
    cfg.set("stop_at_success", "0.9").unwrap();
    cfg.set("family", "normal").unwrap();
    cfg.apply_ablation("no-vs").unwrap();
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    assert!(RunConfig::parse("beta 3").is_err());
    assert!(RunConfig::parse("bogus = 1").is_err());
}

#[test]
fn invalid_configs_fail_validation() {
    for (k, v) in [("sac_lr", "0"), ("eisp_lr", "-1"), ("seeds", ""), ("subgoal_count", "1")] {
        let mut cfg = RunConfig::default();
        let ok = cfg.set(k, v).is_ok() && cfg.validate().is_ok();
        assert!(!ok, "{k}={v} accepted");
    }
}

#[test]
fn cli_reports_errors_in_one_line() {
    let out = eisp_bin().args(["train", "--env", "mazes-9"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("eisp: "));

    let out = eisp_bin().args(["train", "--set", "nonsense=1"]).output().unwrap();
    assert!(!out.status.success());
    assert_eq!(String::from_utf8(out.stderr).unwrap().trim_end().lines().count(), 1);

    let out = eisp_bin().args(["eval", "--checkpoints", "/nonexistent/dir"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_bootstrap_pretrain_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let ok = |args: &[&str]| {
        let out = eisp_bin().args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["bootstrap", "--env", "pointrooms-1", "--out", d, "--set", "bootstrap_episodes=10"]);
    let ds = format!("{d}/dataset_0.bin");
    assert!(Path::new(&ds).is_file());
    ok(&["pretrain", "--env", "pointrooms-1", "--out", d, "--dataset", &ds, "--set", "pretrain_steps=5", "--set", "generator_hidden=8"]);
    assert!(dir.path().join("generator_0.bin").is_file());
    let run = format!("{d}/run");
    let gen = format!("generator={d}/generator_0.bin");
    ok(&[
        "train", "--env", "pointrooms-1", "--out", &run, "--set", &gen, "--set", "generator_hidden=8",
        "--set", "total_steps=400", "--set", "eval_every=200", "--set", "eval_episodes=2",
        "--set", "warmup_steps=100", "--set", "sac_hidden=8,8",
    ]);
    ok(&["eval", "--checkpoints", &run, "--set", "eval_episodes=2"]);
    ok(&["report", "--out", &format!("{d}/report"), &run]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn numeric_settings_round_trip(beta in 0.0f64..100.0, lr in 1e-6f64..1e-1, t in 1usize..200, k in 1usize..64) {
        let mut cfg = RunConfig::default();
        cfg.beta = beta;
        cfg.sac_lr = lr;
        cfg.time_limit = t;
        cfg.candidates = k;
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn metrics_rows_round_trip(step in 0usize..1_000_000, s in 0.0f64..1.0, r in -500.0f64..0.0, l in -10.0f64..10.0) {
        let row = MetricsRow { step, success_rate: s, mean_return: r, l_hy: l, l_hs: -l, critic_loss: l.abs(), actor_loss: l, wall_time_s: 0.0 };
        prop_assert_eq!(MetricsRow::parse_csv_line(&row.csv_line()).unwrap(), row);
    }
}
