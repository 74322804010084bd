//! Offline data: scripted rollouts and a synthetic straight-line corridor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{Env, Layout};
use crate::error::{Error, Result};
use crate::replay::{Dataset, Trajectory};

/// Roll out the scripted controller for `episodes` episodes.
pub fn bootstrap_dataset(layout: &Layout, episodes: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument("noise level must be >= 0".into()));
    }
    let spec = layout.spec();
    let mut env = Env::new(layout.clone());
    env.reset(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b007);
    let mut trajectories = Vec::with_capacity(episodes);
    let mut successes = 0usize;
    for _ in 0..episodes {
        let (s0, g) = env.reset_continue();
        let mut tr = Trajectory::start(s0.clone(), env.achieved_goal(&s0), g.clone());
        loop {
            let a = env.scripted_action(noise, &mut rng);
            let out = env.step(&a)?;
            tr.push(
                spec.clamp_action(&a)?,
                out.reward,
                out.state,
                out.achieved_goal,
                g.clone(),
                out.success,
            );
            if out.done {
                successes += usize::from(out.success);
                break;
            }
        }
        trajectories.push(tr);
    }
    Ok(Dataset {
        env_id: layout.id(),
        success_rate: if episodes == 0 {
            0.0
        } else {
            successes as f64 / episodes as f64
        },
        epsilon: spec.epsilon,
        state_dim: spec.state_dim,
        action_dim: spec.action_dim,
        goal_dim: spec.goal_dim,
        trajectories,
    })
}

/// Straight constant-speed paths in the unit square, `steps` transitions
/// each. With two subgoal slots the hindsight waypoint is the midpoint.
pub fn corridor_dataset(count: usize, steps: usize, seed: u64) -> Result<Dataset> {
    if steps < 2 {
        return Err(Error::InvalidArgument("corridor paths need >= 2 steps".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 0.05;
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        let start = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let end = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let point = |k: usize| {
            let f = k as f64 / steps as f64;
            vec![
                start[0] + f * (end[0] - start[0]),
                start[1] + f * (end[1] - start[1]),
            ]
        };
        let goal = point(steps);
        let mut tr = Trajectory::start(point(0), point(0), goal.clone());
        for k in 1..=steps {
            let p = point(k);
            let r = crate::envs::sparse_reward(&p, &goal, eps);
            let action = vec![
                (end[0] - start[0]) / steps as f64,
                (end[1] - start[1]) / steps as f64,
            ];
            tr.push(action, r, p.clone(), p, goal.clone(), r == 0.0);
        }
        trajectories.push(tr);
    }
    Ok(Dataset {
        env_id: "corridor-2".into(),
        success_rate: 1.0,
        epsilon: eps,
        state_dim: 2,
        action_dim: 2,
        goal_dim: 2,
        trajectories,
    })
}
