//! Offline generator training on hindsight waypoints.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::replay::Dataset;
use crate::subgoal::{GeneratorConfig, GeneratorLossReport, HindsightBatch, SubgoalGenerator};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSettings {
    pub steps: usize,
    pub batch_trajectories: usize,
    pub subgoal_count: usize,
    pub beta: f64,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub generator: SubgoalGenerator,
    /// One report per step, in order.
    pub curve: Vec<GeneratorLossReport>,
}

impl PretrainOutcome {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("step,recon_nll,kl_term,l_hy,l_hs,total\n");
        for (i, r) in self.curve.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                i + 1,
                r.recon_nll,
                r.kl_term,
                r.l_hy,
                r.l_hs,
                r.total
            );
        }
        s
    }
}

/// Build a fresh generator from the seed and train it on `dataset`.
pub fn pretrain_generator(
    dataset: &Dataset,
    config: &GeneratorConfig,
    settings: &PretrainSettings,
) -> Result<PretrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let generator = SubgoalGenerator::new(dataset.state_dim, dataset.goal_dim, config, &mut rng)?;
    pretrain_existing(generator, dataset, settings, &mut rng)
}

pub fn pretrain_existing(
    mut generator: SubgoalGenerator,
    dataset: &Dataset,
    settings: &PretrainSettings,
    rng: &mut ChaCha8Rng,
) -> Result<PretrainOutcome> {
    if dataset.trajectories.is_empty() {
        return Err(Error::InvalidArgument("cannot pretrain on an empty dataset".into()));
    }
    let refs: Vec<_> = dataset.trajectories.iter().collect();
    if !refs.iter().any(|t| t.len() >= settings.subgoal_count) {
        return Err(Error::InvalidArgument(format!(
            "no trajectory has at least {} steps",
            settings.subgoal_count
        )));
    }
    let mut curve = Vec::with_capacity(settings.steps);
    for _ in 0..settings.steps {
        let batch = HindsightBatch::sample(
            &refs,
            settings.subgoal_count,
            settings.batch_trajectories,
            rng,
        )?
        .expect("eligible trajectories checked above")
        .into_batch();
        curve.push(generator.update(&batch, settings.beta, settings.lr, rng)?);
    }
    Ok(PretrainOutcome { generator, curve })
}
