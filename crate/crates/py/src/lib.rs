//! Python bindings: the desk environments, the headline metrics, the replay
//! window schedule, and a one-call training entry point.

use ed2::envs::{make_wrapped, parse_wrappers, Env};
use ed2::harness::{train_run, ExperimentConfig};
use ed2::{metrics, replay};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;
use std::path::PathBuf;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Number of most-recent replay entries the b-th update of a burst samples
/// from.
#[pyfunction]
fn ere_window(d: usize, eta: f64, b: usize, big_b: usize, c_min: usize) -> usize {
    replay::ere_window(d, eta, b, big_b, c_min)
}

/// Scales an action down by its mean magnitude when that mean exceeds 1.
#[pyfunction]
fn normalize_action(mu: Vec<f64>) -> Vec<f64> {
    ed2::agent::normalize_action(&mu)
}

/// Sample mean and sample standard deviation (N-1).
#[pyfunction]
fn mean_std(values: Vec<f64>) -> PyResult<(f64, f64)> {
    metrics::mean_std(&values).map_err(value_err)
}

/// Root-mean-squared deterioration of a series against itself `lag` entries
/// earlier; only drops count.
#[pyfunction]
fn rmsd(series: Vec<f64>, lag: usize) -> PyResult<f64> {
    metrics::rmsd(&series, lag).map_err(value_err)
}

/// Exponential moving average, alpha weighting the newest observation.
#[pyfunction]
fn ema_smooth(series: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    if series.is_empty() || !(alpha > 0.0 && alpha <= 1.0) {
        return Err(PyValueError::new_err("need a nonempty series and alpha in (0, 1]"));
    }
    Ok(metrics::ema_smooth(&series, alpha))
}

/// Seeded percentile bootstrap confidence interval for the mean.
#[pyfunction]
#[pyo3(signature = (values, level=0.95, resamples=10_000, seed=0))]
fn bootstrap_ci(
    values: Vec<f64>,
    level: f64,
    resamples: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    metrics::bootstrap_ci(&values, level, resamples, &mut rng).map_err(value_err)
}

/// The canonical text of the desk-scale default experiment config.
#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default().to_text()
}

/// Content hash of a config text, as used in run log names and headers.
#[pyfunction]
fn config_hash(text: &str) -> PyResult<String> {
    Ok(ExperimentConfig::parse(text).map_err(value_err)?.hash())
}

/// One of the desk control environments, optionally wrapped
/// (e.g. wrappers="delayed:10" or "sparse:1.0").
#[pyclass(unsendable)]
struct DeskEnv {
    env: Box<dyn Env>,
}

#[pymethods]
impl DeskEnv {
    #[new]
    #[pyo3(signature = (name, wrappers=""))]
    fn new(name: &str, wrappers: &str) -> PyResult<DeskEnv> {
        let chain = parse_wrappers(wrappers).map_err(value_err)?;
        let env = make_wrapped(name, &chain).map_err(value_err)?;
        Ok(DeskEnv { env })
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.env.reset(seed)
    }

    /// Returns (next_state, reward, done, truncated).
    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let r = self.env.step(&action).map_err(value_err)?;
        Ok((r.next_state, r.reward, r.done, r.truncated))
    }

    fn solved(&self) -> bool {
        self.env.solved()
    }

    fn spec<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.env.spec();
        let d = PyDict::new(py);
        d.set_item("state_dim", s.state_dim)?;
        d.set_item("action_dim", s.action_dim)?;
        d.set_item("max_action", s.max_action)?;
        d.set_item("episode_length", s.episode_length)?;
        Ok(d)
    }

    fn name(&self) -> &str {
        self.env.name()
    }
}

/// Trains one seed from a config text and returns a result summary; the full
/// JSON-lines log lands in `out_dir`.
#[pyfunction]
fn run_training<'py>(
    py: Python<'py>,
    config_text: &str,
    seed: u64,
    out_dir: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::parse(config_text).map_err(value_err)?;
    let out = train_run(&cfg, seed, &PathBuf::from(out_dir))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let d = PyDict::new(py);
    d.set_item("log_path", out.log_path.display().to_string())?;
    d.set_item("config_hash", out.config_hash)?;
    d.set_item("variant", out.variant)?;
    d.set_item("updates", out.updates)?;
    d.set_item("episodes", out.episode_returns.len())?;
    let phases: Vec<(u64, f64)> =
        out.phases.iter().map(|p| (p.env_step, metrics::mean(&p.returns))).collect();
    d.set_item("phases", phases)?;
    d.set_item("final_mean", out.phases.last().map(|p| metrics::mean(&p.returns)))?;
    d.set_item("rmsd", out.rmsd)?;
    d.set_item("solved_first_step", out.solved_first_step)?;
    d.set_item("critic_loss", out.critic_loss)?;
    d.set_item("actor_loss", out.actor_loss)?;
    Ok(d)
}

#[pymodule]
fn ed2_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(ere_window, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_action, m)?)?;
    m.add_function(wrap_pyfunction!(mean_std, m)?)?;
    m.add_function(wrap_pyfunction!(rmsd, m)?)?;
    m.add_function(wrap_pyfunction!(ema_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_ci, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(run_training, m)?)?;
    m.add_class::<DeskEnv>()?;
    Ok(())
}
