//! Python bindings: environments, distribution oracles, the subgoal
//! generator, the selector and the training harness.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use eisp::envs::{make_layout, EnvOverrides};
use eisp::harness::{self, MetricsRow, RunConfig};
use eisp::nn::{dist, Family, LocScaleDist};
use eisp::planner::{choose_subgoal, SelectorMode};
use eisp::subgoal::GeneratorConfig;

fn err(e: eisp::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn family(name: &str) -> PyResult<Family> {
    Family::parse(name).map_err(err)
}

/// One running episode.
#[pyclass(name = "Env")]
struct PyEnv {
    inner: eisp::envs::Env,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (env_id, seed = 0))]
    fn new(env_id: &str, seed: u64) -> PyResult<Self> {
        let mut inner = eisp::envs::Env::make(env_id, &EnvOverrides::default()).map_err(err)?;
        inner.reset(seed);
        Ok(Self {
            inner,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Reseed and start a fresh episode; returns (state, goal).
    fn reset(&mut self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.inner.reset(seed)
    }

    /// Next episode from the current random stream.
    fn reset_continue(&mut self) -> (Vec<f64>, Vec<f64>) {
        self.inner.reset_continue()
    }

    /// Returns (state, reward, done, success).
    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let out = self.inner.step(&action).map_err(err)?;
        Ok((out.state, out.reward, out.done, out.success))
    }

    fn scripted_action(&mut self, noise: f64) -> Vec<f64> {
        self.inner.scripted_action(noise, &mut self.rng)
    }

    #[getter]
    fn state(&self) -> Vec<f64> {
        self.inner.state().to_vec()
    }

    #[getter]
    fn goal(&self) -> Vec<f64> {
        self.inner.goal().to_vec()
    }

    #[getter]
    fn t(&self) -> usize {
        self.inner.t()
    }

    fn spec<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.spec();
        let d = PyDict::new(py);
        d.set_item("state_dim", s.state_dim)?;
        d.set_item("action_dim", s.action_dim)?;
        d.set_item("goal_dim", s.goal_dim)?;
        d.set_item("epsilon", s.epsilon)?;
        d.set_item("horizon", s.horizon)?;
        d.set_item("action_low", s.action_low.clone())?;
        d.set_item("action_high", s.action_high.clone())?;
        Ok(d)
    }
}

/// Closed-form KL(q ‖ p) for diagonal distributions of one family.
#[pyfunction]
fn kl_divergence(
    family_name: &str,
    q_loc: Vec<f64>,
    q_scale: Vec<f64>,
    p_loc: Vec<f64>,
    p_scale: Vec<f64>,
) -> PyResult<f64> {
    let f = family(family_name)?;
    let q = LocScaleDist::new(f, q_loc, q_scale).map_err(err)?;
    let p = LocScaleDist::new(f, p_loc, p_scale).map_err(err)?;
    dist::kl_divergence(&q, &p).map_err(err)
}

#[pyfunction]
fn log_prob(family_name: &str, loc: Vec<f64>, scale: Vec<f64>, x: Vec<f64>) -> PyResult<f64> {
    let d = LocScaleDist::new(family(family_name)?, loc, scale).map_err(err)?;
    d.log_prob(&x).map_err(err)
}

/// Value selector: returns (index, subgoal, snapped).
#[pyfunction]
#[pyo3(signature = (candidates, values, goal, snap_eps, first = false))]
fn select_subgoal(
    candidates: Vec<Vec<f64>>,
    values: Vec<f64>,
    goal: Vec<f64>,
    snap_eps: f64,
    first: bool,
) -> PyResult<(usize, Vec<f64>, bool)> {
    let mode = if first {
        SelectorMode::First
    } else {
        SelectorMode::Value
    };
    let sel = choose_subgoal(candidates, values, &goal, snap_eps, mode).map_err(err)?;
    Ok((sel.index, sel.subgoal, sel.snapped))
}

#[pyclass(name = "SubgoalGenerator")]
struct PyGenerator {
    inner: eisp::subgoal::SubgoalGenerator,
}

#[pymethods]
impl PyGenerator {
    #[new]
    #[pyo3(signature = (state_dim, goal_dim, hidden = 64, family_name = "laplace", sigma_r = 0.1, seed = 0))]
    fn new(
        state_dim: usize,
        goal_dim: usize,
        hidden: usize,
        family_name: &str,
        sigma_r: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = GeneratorConfig {
            hidden,
            family: family(family_name)?,
            sigma_r,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = eisp::subgoal::SubgoalGenerator::new(state_dim, goal_dim, &cfg, &mut rng).map_err(err)?;
        Ok(Self { inner })
    }

    /// Subgoal distribution for (state, goal) as (loc, scale).
    fn encode(&self, state: Vec<f64>, goal: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let d = self.inner.encode(&state, &goal).map_err(err)?;
        Ok((d.loc().to_vec(), d.scale().to_vec()))
    }

    /// Goal reconstructed from (state, subgoal).
    fn decode(&self, state: Vec<f64>, subgoal: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.decode(&state, &subgoal).map_err(err)
    }
}

/// Run settings as `key = value` text.
#[pyclass(name = "RunConfig")]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::parse(text).map_err(err)?,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(err)
    }

    fn ablate(&mut self, name: &str) -> PyResult<()> {
        self.inner.apply_ablation(name).map_err(err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }
}

fn row_dict<'py>(py: Python<'py>, r: &MetricsRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("step", r.step)?;
    d.set_item("success_rate", r.success_rate)?;
    d.set_item("mean_return", r.mean_return)?;
    d.set_item("l_hy", r.l_hy)?;
    d.set_item("l_hs", r.l_hs)?;
    d.set_item("critic_loss", r.critic_loss)?;
    d.set_item("actor_loss", r.actor_loss)?;
    d.set_item("wall_time_s", r.wall_time_s)?;
    Ok(d)
}

/// Train one seed in memory; returns the metrics rows as dicts.
#[pyfunction]
fn train_seed<'py>(py: Python<'py>, config: &PyConfig, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let run = harness::train_seed(&config.inner, seed, None).map_err(err)?;
    run.rows.iter().map(|r| row_dict(py, r)).collect()
}

/// Train every configured seed and write the output directory.
#[pyfunction]
fn train(config: &PyConfig) -> PyResult<Vec<(u64, f64)>> {
    let runs = harness::train(&config.inner).map_err(err)?;
    Ok(runs
        .iter()
        .map(|r| (r.seed, r.rows.last().map_or(0.0, |m| m.success_rate)))
        .collect())
}

/// Greedy evaluation of a saved checkpoint: (success_rate, mean_return).
#[pyfunction]
#[pyo3(signature = (checkpoint, episodes = 100, seed = 0))]
fn evaluate(checkpoint: PathBuf, episodes: usize, seed: u64) -> PyResult<(f64, f64)> {
    let (agent, env_id) = harness::Agent::load(&checkpoint).map_err(err)?;
    let layout = make_layout(&env_id, &EnvOverrides::default()).map_err(err)?;
    let planner = RunConfig::default().planner_config(layout.spec().epsilon);
    let ev = harness::evaluate(&agent, &layout, episodes, seed, &planner).map_err(err)?;
    Ok((ev.success_rate, ev.mean_return))
}

#[pyfunction]
fn metrics_header() -> &'static str {
    harness::METRICS_HEADER
}

#[pymodule]
fn eisplab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnv>()?;
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(log_prob, m)?)?;
    m.add_function(wrap_pyfunction!(select_subgoal, m)?)?;
    m.add_function(wrap_pyfunction!(train_seed, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_header, m)?)?;
    Ok(())
}
