mod common;

use eisp::replay::{
    hindsight_subgoals, BatchArrays, Dataset, HerMode, HerStrategy, ReplayBuffer, Trajectory,
};
use proptest::prelude::*;

const EPS: f64 = 0.05;

fn filled_buffer(seed: u64, count: usize) -> ReplayBuffer {
    common::random_walk_buffer(seed, count, EPS)
}

fn reward(ag: &[f64], g: &[f64]) -> f64 {
    common::sparse(ag, g, EPS)
}

#[test]
fn future_relabels_recompute_reward_and_look_ahead() {
    let audit = common::her_audit(10_000, 1);
    assert_eq!((audit.reward_mismatch, audit.index_violations, audit.final_mismatch), (0, 0, 0));
    let frac = audit.relabeled as f64 / 10_000.0;
    assert!((frac - 0.8).abs() < 0.03, "relabel fraction {frac}");
}

#[test]
fn done_flags_follow_rewards() {
    let buf = filled_buffer(1, 40);
    let batch = buf.sample(2000, HerStrategy::new(HerMode::Future, 0.8).unwrap(), &mut common::rng(2)).unwrap();
    for (tr, o) in batch.transitions.iter().zip(&batch.origins) {
        let traj = buf.trajectory(o.trajectory).unwrap();
        assert_eq!(tr.done, tr.reward == 0.0 || (o.relabel_index.is_none() && traj.dones[o.step]));
        assert_eq!(tr.state, traj.states[o.step]);
    }
}

#[test]
fn final_relabels_use_last_achieved_goal() {
    let buf = filled_buffer(3, 20);
    let mut r = common::rng(4);
    let her = HerStrategy::new(HerMode::Final, 1.0).unwrap();
    let batch = buf.sample(2000, her, &mut r).unwrap();
    for (tr, o) in batch.transitions.iter().zip(&batch.origins) {
        let traj = buf.trajectory(o.trajectory).unwrap();
        assert_eq!(tr.goal, traj.final_achieved());
        assert_eq!(tr.reward, reward(&tr.achieved_next, &tr.goal));
    }
}

#[test]
fn no_relabel_keeps_stored_transitions() {
    let buf = filled_buffer(5, 10);
    let mut r = common::rng(6);
    let batch = buf.sample(500, HerStrategy::new(HerMode::None, 0.8).unwrap(), &mut r).unwrap();
    for (tr, o) in batch.transitions.iter().zip(&batch.origins) {
        let traj = buf.trajectory(o.trajectory).unwrap();
        assert!(o.relabel_index.is_none());
        assert_eq!(*tr, traj.transition(o.step));
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(HerStrategy::new(HerMode::Future, 1.5).is_err());
    assert!(ReplayBuffer::new(0, EPS).is_err());
    let buf = ReplayBuffer::new(3, EPS).unwrap();
    let mut r = common::rng(0);
    assert!(buf.sample(4, HerStrategy::default(), &mut r).is_err());
    let mut buf = filled_buffer(0, 1);
    assert!(buf.sample(0, HerStrategy::default(), &mut r).is_err());
    // stored reward inconsistent with the achieved goal
    let mut bad = Trajectory::start(vec![0.0], vec![0.0], vec![1.0]);
    bad.push(vec![0.0], 0.0, vec![0.0], vec![0.0], vec![1.0], false);
    assert!(buf.store(bad).is_err());
}

#[test]
fn sampling_is_reproducible() {
    let buf = filled_buffer(9, 15);
    let a = buf.sample(300, HerStrategy::default(), &mut common::rng(1)).unwrap();
    let b = buf.sample(300, HerStrategy::default(), &mut common::rng(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn batch_arrays_line_up_with_transitions() {
    let buf = filled_buffer(2, 5);
    let s = buf.sample(32, HerStrategy::default(), &mut common::rng(3)).unwrap();
    let arr = BatchArrays::from_transitions(&s.transitions).unwrap();
    for (i, tr) in s.transitions.iter().enumerate() {
        assert_eq!(arr.states.row(i).to_vec(), tr.state);
        assert_eq!(arr.goals.row(i).to_vec(), tr.goal);
        assert_eq!(arr.rewards[[i, 0]], tr.reward);
        assert_eq!(arr.dones[[i, 0]], f64::from(u8::from(tr.done)));
    }
}

#[test]
fn hindsight_grid() {
    let audit = common::hindsight_grid_audit(21);
    assert_eq!(audit.mismatches, 0, "{audit:?}");
    assert_eq!(audit.cells + audit.rejected, 397 * 7);
}

#[test]
fn hindsight_examples() {
    let traj = common::random_walk(10, 1, EPS, &mut common::rng(0));
    assert_eq!(hindsight_subgoals(&traj, 2).unwrap().subgoal_indices, vec![5]);
    assert_eq!(hindsight_subgoals(&traj, 4).unwrap().subgoal_indices, vec![2, 5, 7]);
    let long = common::random_walk(300, 1, EPS, &mut common::rng(0));
    assert_eq!(hindsight_subgoals(&long, 4).unwrap().subgoal_indices, vec![75, 150, 225]);
    assert!(hindsight_subgoals(&traj, 1).is_err());
}

#[test]
fn dataset_round_trip() {
    let mut r = common::rng(4);
    let data = Dataset {
        env_id: "pointrooms-2".into(),
        success_rate: 0.25,
        epsilon: EPS,
        state_dim: 2,
        action_dim: 2,
        goal_dim: 2,
        trajectories: (0..4).map(|_| common::random_walk(7, 2, EPS, &mut r)).collect(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    data.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), data);
    let mut bytes = data.to_bytes();
    bytes[0] ^= 1;
    assert!(Dataset::from_bytes(&bytes).is_err());
}

proptest! {
    #[test]
    fn fifo_keeps_newest(cap in 1usize..8, count in 1usize..20) {
        let mut buf = ReplayBuffer::new(cap, EPS).unwrap();
        let mut r = common::rng(cap as u64 * 100 + count as u64);
        let mut firsts = Vec::new();
        for _ in 0..count {
            let tr = common::random_walk(3, 1, EPS, &mut r);
            firsts.push(tr.states[0].clone());
            buf.store(tr).unwrap();
        }
        prop_assert_eq!(buf.len(), count.min(cap));
        let kept: Vec<_> = buf.trajectories().map(|t| t.states[0].clone()).collect();
        prop_assert_eq!(kept, firsts[count - count.min(cap)..].to_vec());
        prop_assert_eq!(buf.num_transitions(), 3 * count.min(cap));
    }

    #[test]
    fn hindsight_indices_increase(t in 2usize..500, n in 2usize..9) {
        prop_assume!(t >= n);
        let traj = common::random_walk(t, 1, EPS, &mut common::rng(t as u64));
        let h = hindsight_subgoals(&traj, n).unwrap();
        prop_assert!(h.subgoal_indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(h.anchor_indices.iter().zip(&h.subgoal_indices).all(|(a, s)| a < s));
    }
}
