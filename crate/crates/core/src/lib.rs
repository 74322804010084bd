pub mod error;
pub mod harness;
pub mod envs;
pub mod nn;
pub mod planner;
pub mod replay;
pub mod sac;
pub mod subgoal;

pub use error::{Error, Result};
