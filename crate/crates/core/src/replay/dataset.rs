//! Offline trajectory dataset file.
//!
//! Layout (little endian): magic `EISPDATA`, `u32` version, `u32`-length env
//! id, `u64` episode count, `f64` success rate, `f64` epsilon, `u64` state,
//! action and goal dims; then per trajectory a `u64` length `T`, the desired
//! goal, `T+1` states, `T+1` achieved goals, `T` actions, `T` goals used,
//! `T` rewards and `T` done bytes.

use std::fs;
use std::path::Path;

use super::Trajectory;
use crate::error::{Error, Result};
use crate::nn::checkpoint::Reader;

const MAGIC: &[u8; 8] = b"EISPDATA";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub env_id: String,
    pub success_rate: f64,
    pub epsilon: f64,
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    pub trajectories: Vec<Trajectory>,
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_bits().to_le_bytes());
    }
}

fn get_f64s(r: &mut Reader<'_>, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| r.f64()).collect()
}

impl Dataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.env_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.env_id.as_bytes());
        out.extend_from_slice(&(self.trajectories.len() as u64).to_le_bytes());
        put_f64s(&mut out, &[self.success_rate, self.epsilon]);
        for d in [self.state_dim, self.action_dim, self.goal_dim] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for tr in &self.trajectories {
            out.extend_from_slice(&(tr.len() as u64).to_le_bytes());
            put_f64s(&mut out, &tr.desired_goal);
            for s in &tr.states {
                put_f64s(&mut out, s);
            }
            for ag in &tr.achieved {
                put_f64s(&mut out, ag);
            }
            for a in &tr.actions {
                put_f64s(&mut out, a);
            }
            for g in &tr.goals_used {
                put_f64s(&mut out, g);
            }
            put_f64s(&mut out, &tr.rewards);
            out.extend(tr.dones.iter().map(|&d| u8::from(d)));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a dataset file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let id_len = r.u32()? as usize;
        let env_id = String::from_utf8(r.take(id_len)?.to_vec())
            .map_err(|_| Error::Format("non-UTF-8 env id".into()))?;
        let count = r.u64()? as usize;
        let success_rate = r.f64()?;
        let epsilon = r.f64()?;
        let state_dim = r.u64()? as usize;
        let action_dim = r.u64()? as usize;
        let goal_dim = r.u64()? as usize;
        let mut trajectories = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let t = r.u64()? as usize;
            let desired_goal = get_f64s(&mut r, goal_dim)?;
            let states = (0..=t)
                .map(|_| get_f64s(&mut r, state_dim))
                .collect::<Result<Vec<_>>>()?;
            let achieved = (0..=t)
                .map(|_| get_f64s(&mut r, goal_dim))
                .collect::<Result<Vec<_>>>()?;
            let actions = (0..t)
                .map(|_| get_f64s(&mut r, action_dim))
                .collect::<Result<Vec<_>>>()?;
            let goals_used = (0..t)
                .map(|_| get_f64s(&mut r, goal_dim))
                .collect::<Result<Vec<_>>>()?;
            let rewards = get_f64s(&mut r, t)?;
            let dones = r.take(t)?.iter().map(|&b| b != 0).collect();
            trajectories.push(Trajectory {
                states,
                achieved,
                actions,
                rewards,
                goals_used,
                dones,
                desired_goal,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after dataset".into()));
        }
        Ok(Self {
            env_id,
            success_rate,
            epsilon,
            state_dim,
            action_dim,
            goal_dim,
            trajectories,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
