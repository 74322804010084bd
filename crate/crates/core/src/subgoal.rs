//! Conditional VAE whose latent space is the subgoal space.
//!
//! The encoder maps `(s, g)` to a location-scale distribution over subgoals;
//! the decoder reconstructs the final goal from `(s, subgoal)`.

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn::dist::{
    kl_to_standard_on_tape, log_prob_on_tape, rsample_on_tape, scale_from_raw, scale_on_tape,
    HALF_LN_2PI,
};
use crate::nn::{
    Activation, AdamConfig, AdamState, BoundNet, Checkpoint, DenseNet, Family, LocScaleDist,
    Tape, Var,
};
use crate::replay::{hindsight_subgoals, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub hidden: usize,
    pub activation: Activation,
    pub family: Family,
    pub sigma_r: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            activation: Activation::Relu,
            family: Family::Laplace,
            sigma_r: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLossReport {
    pub recon_nll: f64,
    pub kl_term: f64,
    pub l_hy: f64,
    pub l_hs: f64,
    pub total: f64,
    pub beta: f64,
}

/// Rows of `(state, goal)` for the ELBO plus optional hindsight triples.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorBatch {
    pub states: Array2<f64>,
    pub goals: Array2<f64>,
    pub hindsight: Option<HindsightBatch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HindsightBatch {
    pub anchors: Array2<f64>,
    pub goals: Array2<f64>,
    pub subgoals: Array2<f64>,
}

impl HindsightBatch {
    pub fn len(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.nrows() == 0
    }

    /// Waypoints of `count` randomly chosen trajectories; trajectories shorter
    /// than `n` are skipped. Returns `None` when nothing qualifies.
    pub fn sample<'a, R: Rng + ?Sized>(
        trajectories: &[&'a Trajectory],
        n: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<Option<Self>> {
        let eligible: Vec<&Trajectory> = trajectories
            .iter()
            .copied()
            .filter(|t| t.len() >= n)
            .collect();
        if eligible.is_empty() || count == 0 {
            return Ok(None);
        }
        let mut anchors = Vec::new();
        let mut goals = Vec::new();
        let mut subgoals = Vec::new();
        let sd = eligible[0].states[0].len();
        let gd = eligible[0].desired_goal.len();
        for _ in 0..count {
            let tr = eligible[rng.random_range(0..eligible.len())];
            let h = hindsight_subgoals(tr, n)?;
            for (a, sg) in h.anchors.iter().zip(&h.subgoals) {
                anchors.extend_from_slice(a);
                goals.extend_from_slice(&h.goal);
                subgoals.extend_from_slice(sg);
            }
        }
        let rows = anchors.len() / sd;
        Ok(Some(Self {
            anchors: Array2::from_shape_vec((rows, sd), anchors)
                .map_err(|e| Error::InvalidTrajectory(e.to_string()))?,
            goals: Array2::from_shape_vec((rows, gd), goals)
                .map_err(|e| Error::InvalidTrajectory(e.to_string()))?,
            subgoals: Array2::from_shape_vec((rows, gd), subgoals)
                .map_err(|e| Error::InvalidTrajectory(e.to_string()))?,
        }))
    }

    /// The triples double as `(state, goal)` rows for the ELBO term.
    pub fn into_batch(self) -> GeneratorBatch {
        GeneratorBatch {
            states: self.anchors.clone(),
            goals: self.goals.clone(),
            hindsight: Some(self),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubgoalGenerator {
    pub trunk: DenseNet,
    pub loc_head: DenseNet,
    pub scale_head: DenseNet,
    pub decoder: DenseNet,
    pub family: Family,
    pub sigma_r: f64,
    opt: AdamState,
    state_dim: usize,
    goal_dim: usize,
}

struct BoundGenerator {
    trunk: BoundNet,
    loc: BoundNet,
    scale: BoundNet,
    decoder: BoundNet,
}

struct LossVars {
    recon: Var,
    kl: Var,
    l_hy: Var,
    l_hs: Option<Var>,
    total: Var,
}

impl SubgoalGenerator {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        goal_dim: usize,
        config: &GeneratorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if !(config.sigma_r > 0.0) {
            return Err(Error::InvalidArgument("sigma_r must be positive".into()));
        }
        let h = config.hidden;
        let act = config.activation;
        let trunk = DenseNet::new(&[state_dim + goal_dim, h, h], act, rng)?;
        let loc_head = DenseNet::new(&[h, goal_dim], act, rng)?;
        let scale_head = DenseNet::new(&[h, goal_dim], act, rng)?;
        let decoder = DenseNet::new(&[state_dim + goal_dim, h, h, goal_dim], act, rng)?;
        let mut gen = Self {
            trunk,
            loc_head,
            scale_head,
            decoder,
            family: config.family,
            sigma_r: config.sigma_r,
            opt: AdamState::new(std::iter::empty(), AdamConfig::default()),
            state_dim,
            goal_dim,
        };
        gen.reset_optimizer();
        Ok(gen)
    }

    /// Fresh Adam moments, e.g. after parameters were overwritten.
    pub fn reset_optimizer(&mut self) {
        self.opt = AdamState::new(self.params(), AdamConfig::default());
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn goal_dim(&self) -> usize {
        self.goal_dim
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.opt
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = self.trunk.params();
        p.extend(self.loc_head.params());
        p.extend(self.scale_head.params());
        p.extend(self.decoder.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = self.trunk.params_mut();
        p.extend(self.loc_head.params_mut());
        p.extend(self.scale_head.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut n = self.trunk.param_names("encoder.trunk");
        n.extend(self.loc_head.param_names("encoder.loc"));
        n.extend(self.scale_head.param_names("encoder.scale"));
        n.extend(self.decoder.param_names("decoder"));
        n
    }

    fn check(&self, states: &Array2<f64>, goals: &Array2<f64>) -> Result<()> {
        if states.ncols() != self.state_dim {
            return Err(shape_err("generator state", self.state_dim, states.ncols()));
        }
        if goals.ncols() != self.goal_dim {
            return Err(shape_err("generator goal", self.goal_dim, goals.ncols()));
        }
        if states.nrows() != goals.nrows() {
            return Err(shape_err("generator rows", states.nrows(), goals.nrows()));
        }
        Ok(())
    }

    /// Batched encoder: per-row locations and scales.
    pub fn encode_batch(
        &self,
        states: &Array2<f64>,
        goals: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check(states, goals)?;
        let mut h = self
            .trunk
            .forward_batch(&concatenate![Axis(1), *states, *goals])?;
        let act = self.trunk.activation();
        h.mapv_inplace(|v| act.apply(v));
        let loc = self.loc_head.forward_batch(&h)?;
        let scale = self.scale_head.forward_batch(&h)?.mapv(scale_from_raw);
        Ok((loc, scale))
    }

    pub fn encode(&self, state: &[f64], goal: &[f64]) -> Result<LocScaleDist> {
        let s = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("row");
        let g = Array2::from_shape_vec((1, goal.len()), goal.to_vec()).expect("row");
        let (loc, scale) = self.encode_batch(&s, &g)?;
        LocScaleDist::new(self.family, loc.row(0).to_vec(), scale.row(0).to_vec())
    }

    pub fn decode_batch(&self, states: &Array2<f64>, subgoals: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(states, subgoals)?;
        self.decoder
            .forward_batch(&concatenate![Axis(1), *states, *subgoals])
    }

    pub fn decode(&self, state: &[f64], subgoal: &[f64]) -> Result<Vec<f64>> {
        let mut x = state.to_vec();
        if subgoal.len() != self.goal_dim {
            return Err(shape_err("generator subgoal", self.goal_dim, subgoal.len()));
        }
        x.extend_from_slice(subgoal);
        self.decoder.forward(&x)
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundGenerator {
        BoundGenerator {
            trunk: self.trunk.bind(tape, trainable),
            loc: self.loc_head.bind(tape, trainable),
            scale: self.scale_head.bind(tape, trainable),
            decoder: self.decoder.bind(tape, trainable),
        }
    }

    fn encode_on_tape(
        &self,
        tape: &mut Tape,
        b: &BoundGenerator,
        states: &Array2<f64>,
        goals: &Array2<f64>,
    ) -> Result<(Var, Var)> {
        let x = tape.constant(concatenate![Axis(1), *states, *goals]);
        let h = b.trunk.forward(tape, x)?;
        let h = self.trunk.activation().on_tape(tape, h);
        let loc = b.loc.forward(tape, h)?;
        let raw = b.scale.forward(tape, h)?;
        let scale = scale_on_tape(tape, raw);
        Ok((loc, scale))
    }

    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        b: &BoundGenerator,
        batch: &GeneratorBatch,
        noise: &Array2<f64>,
        beta: f64,
    ) -> Result<LossVars> {
        self.check(&batch.states, &batch.goals)?;
        let n = batch.states.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("generator batch is empty".into()));
        }
        if noise.dim() != (n, self.goal_dim) {
            return Err(shape_err(
                "generator noise",
                format!("{n}x{}", self.goal_dim),
                format!("{:?}", noise.dim()),
            ));
        }
        let (loc, scale) = self.encode_on_tape(tape, b, &batch.states, &batch.goals)?;
        let z = rsample_on_tape(tape, self.family, loc, scale, noise)?;
        let s = tape.constant(batch.states.clone());
        let dec_in = tape.concat(&[s, z])?;
        let recon_goal = b.decoder.forward(tape, dec_in)?;
        let target = tape.constant(batch.goals.clone());
        let diff = tape.sub(recon_goal, target)?;
        let sq = tape.square(diff);
        let sq = tape.row_sum(sq);
        let var = self.sigma_r * self.sigma_r;
        let nll = tape.scale(sq, 0.5 / var);
        let constant = self.goal_dim as f64 * (HALF_LN_2PI + self.sigma_r.ln());
        let nll = tape.shift(nll, constant);
        let recon = tape.mean(nll);
        let kl_rows = kl_to_standard_on_tape(tape, self.family, loc, scale)?;
        let kl = tape.mean(kl_rows);
        let l_hy = tape.add(recon, kl)?;

        let l_hs = match &batch.hindsight {
            Some(h) if !h.is_empty() => {
                if h.subgoals.ncols() != self.goal_dim {
                    return Err(shape_err("hindsight subgoal", self.goal_dim, h.subgoals.ncols()));
                }
                let (hl, hs) = self.encode_on_tape(tape, b, &h.anchors, &h.goals)?;
                let x = tape.constant(h.subgoals.clone());
                let lp = log_prob_on_tape(tape, self.family, hl, hs, x)?;
                let m = tape.mean(lp);
                Some(tape.neg(m))
            }
            _ => None,
        };
        let total = match l_hs {
            Some(v) if beta != 0.0 => {
                let w = tape.scale(v, beta);
                tape.add(l_hy, w)?
            }
            _ => l_hy,
        };
        Ok(LossVars {
            recon,
            kl,
            l_hy,
            l_hs,
            total,
        })
    }

    fn report(tape: &Tape, v: &LossVars, beta: f64) -> GeneratorLossReport {
        let l_hy = tape.scalar_value(v.l_hy);
        let l_hs = v.l_hs.map(|x| tape.scalar_value(x)).unwrap_or(0.0);
        GeneratorLossReport {
            recon_nll: tape.scalar_value(v.recon),
            kl_term: tape.scalar_value(v.kl),
            l_hy,
            l_hs,
            total: tape.scalar_value(v.total),
            beta,
        }
    }

    /// Loss values without updating anything. `noise` is base noise of the
    /// family, one row per ELBO row.
    pub fn losses_with_noise(
        &self,
        batch: &GeneratorBatch,
        noise: &Array2<f64>,
        beta: f64,
    ) -> Result<GeneratorLossReport> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let v = self.loss_on_tape(&mut tape, &b, batch, noise, beta)?;
        Ok(Self::report(&tape, &v, beta))
    }

    /// Loss and gradients in parameter order (for gradient checks).
    pub fn loss_and_gradients(
        &self,
        batch: &GeneratorBatch,
        noise: &Array2<f64>,
        beta: f64,
    ) -> Result<(GeneratorLossReport, Vec<Array2<f64>>)> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, true);
        let v = self.loss_on_tape(&mut tape, &b, batch, noise, beta)?;
        let report = Self::report(&tape, &v, beta);
        let grads = tape.backward(v.total)?;
        let g = b
            .trunk
            .vars()
            .iter()
            .chain(b.loc.vars())
            .chain(b.scale.vars())
            .chain(b.decoder.vars())
            .map(|&x| grads.wrt(x))
            .collect();
        Ok((report, g))
    }

    pub fn update_with_noise(
        &mut self,
        batch: &GeneratorBatch,
        noise: &Array2<f64>,
        beta: f64,
        lr: f64,
    ) -> Result<GeneratorLossReport> {
        if !(beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be >= 0, got {beta}")));
        }
        let (report, grads) = self.loss_and_gradients(batch, noise, beta)?;
        if !report.total.is_finite() {
            return Err(Error::NonFinite("generator loss"));
        }
        let names = self.param_names();
        let mut opt = std::mem::replace(
            &mut self.opt,
            AdamState::new(std::iter::empty(), AdamConfig::default()),
        );
        let result = {
            let mut params = self.params_mut();
            opt.step(&mut params, &grads, &names, lr)
        };
        self.opt = opt;
        result?;
        Ok(report)
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, self.goal_dim), || self.family.base_noise(rng))
    }

    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &GeneratorBatch,
        beta: f64,
        lr: f64,
        rng: &mut R,
    ) -> Result<GeneratorLossReport> {
        let noise = self.sample_noise(batch.states.nrows(), rng);
        self.update_with_noise(batch, &noise, beta, lr)
    }

    pub fn save_to(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.put_net(&format!("{prefix}.trunk"), &self.trunk);
        ck.put_net(&format!("{prefix}.loc"), &self.loc_head);
        ck.put_net(&format!("{prefix}.scale"), &self.scale_head);
        ck.put_net(&format!("{prefix}.decoder"), &self.decoder);
        ck.put_adam(&format!("{prefix}.opt"), &self.opt);
        ck.put_text(format!("{prefix}.family"), self.family.name());
        ck.put_u64(
            format!("{prefix}.meta"),
            vec![
                self.state_dim as u64,
                self.goal_dim as u64,
                self.sigma_r.to_bits(),
            ],
        );
    }

    pub fn load_from(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let meta = ck.u64s(&format!("{prefix}.meta"))?;
        if meta.len() != 3 {
            return Err(Error::Format("bad generator metadata".into()));
        }
        Ok(Self {
            trunk: ck.net(&format!("{prefix}.trunk"))?,
            loc_head: ck.net(&format!("{prefix}.loc"))?,
            scale_head: ck.net(&format!("{prefix}.scale"))?,
            decoder: ck.net(&format!("{prefix}.decoder"))?,
            family: Family::parse(ck.text(&format!("{prefix}.family"))?)?,
            sigma_r: f64::from_bits(meta[2]),
            opt: ck.adam(&format!("{prefix}.opt"))?,
            state_dim: meta[0] as usize,
            goal_dim: meta[1] as usize,
        })
    }
}

/// `K` independent draws, or `K` copies of the location when `zero_noise`.
pub fn sample_subgoals<R: Rng + ?Sized>(
    dist: &LocScaleDist,
    k: usize,
    zero_noise: bool,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::InvalidArgument("candidate count must be >= 1".into()));
    }
    Ok((0..k)
        .map(|_| {
            if zero_noise {
                dist.loc().to_vec()
            } else {
                dist.sample(rng)
            }
        })
        .collect())
}
