//! Python bindings: equilibrium analysis, named scenarios, the RL
//! environment, episode rollouts and policy training.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mixflow_core::dynamics::IdmParams;
use mixflow_core::env::Env as CoreEnv;
use mixflow_core::equilibrium::{self, LowerBoundConfig};
use mixflow_core::experiment::commands::{self, CommandError};
use mixflow_core::experiment::config::{ConfigFile, ExperimentConfig};
use mixflow_core::experiment::recipes;
use mixflow_core::policy::evaluate::run_with_params;
use mixflow_core::policy::io::load_params;
use mixflow_core::scenario::{LengthChoice, ScenarioConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn command_err(e: CommandError) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn length_choice(length: Option<f64>) -> LengthChoice {
    length.map_or(LengthChoice::Nominal, LengthChoice::Fixed)
}

/// A scenario from a recipe name or a JSON scenario object.
fn scenario_from(spec: &str) -> PyResult<ScenarioConfig> {
    if let Some(r) = recipes::find(spec) {
        return Ok(r.scenario);
    }
    let s: ScenarioConfig = serde_json::from_str(spec)
        .map_err(|e| PyValueError::new_err(format!("`{spec}` is neither a recipe nor scenario JSON: {e}")))?;
    s.validate().map_err(value_err)?;
    Ok(s)
}

/// Uniform-flow velocity v* (m/s) of `n` vehicles on a ring of `length` m.
#[pyfunction]
#[pyo3(signature = (length, n, vehicle_length = 5.0))]
fn uniform_flow_velocity(length: f64, n: usize, vehicle_length: f64) -> PyResult<f64> {
    equilibrium::uniform_flow_velocity(length, n, vehicle_length, &IdmParams::default())
        .map(|p| p.v_star)
        .map_err(value_err)
}

/// Equilibrium velocity for headway `h` m under the default IDM.
#[pyfunction]
fn equilibrium_velocity(h: f64) -> PyResult<f64> {
    equilibrium::equilibrium_velocity(h, &IdmParams::default()).map_err(value_err)
}

/// Mean and sample std of the human-only stop-and-go velocity.
#[pyfunction]
fn stop_and_go_velocity(length: f64, n: usize, seeds: Vec<u64>) -> PyResult<(f64, f64)> {
    equilibrium::stop_and_go_average_velocity(length, n, &seeds, &LowerBoundConfig::default())
        .map(|lb| (lb.mean, lb.std))
        .map_err(value_err)
}

#[pyfunction]
fn recipe_names() -> Vec<&'static str> {
    recipes::names()
}

/// Scenario of a recipe as JSON, for editing and passing back.
#[pyfunction]
fn scenario_json(recipe: &str) -> PyResult<String> {
    let r = recipes::find(recipe).ok_or_else(|| value_err(format!("unknown recipe `{recipe}`")))?;
    Ok(serde_json::to_string_pretty(&r.scenario).expect("scenario serialises"))
}

/// One deterministic episode. Returns a dict of summary metrics.
#[pyfunction]
#[pyo3(signature = (scenario, seed = 0, length = None, params = None))]
fn run_episode(
    py: Python<'_>,
    scenario: &str,
    seed: u64,
    length: Option<f64>,
    params: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let s = scenario_from(scenario)?;
    let loaded = params.map(|p| load_params(&p)).transpose().map_err(value_err)?;
    let summary = py
        .detach(|| run_with_params(&s, loaded.as_ref().map(|(sp, p)| (sp, p.as_slice())), length_choice(length), seed))
        .map_err(value_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("length", summary.length)?;
    d.set_item("steps", summary.steps)?;
    d.set_item("collided", summary.collided)?;
    d.set_item("mean_velocity_final", summary.mean_velocity_final)?;
    d.set_item("std_velocity_final", summary.std_velocity_final)?;
    d.set_item("min_velocity_final", summary.min_velocity_final)?;
    d.set_item("return", summary.episode_return(1.0))?;
    Ok(d.into_any().unbind())
}

fn resolve(recipe: &str, seed: u64, config: Option<&str>) -> PyResult<ExperimentConfig> {
    let file = match config {
        Some(text) => ConfigFile::parse(text).map_err(value_err)?,
        None => ConfigFile::default(),
    };
    ExperimentConfig::resolve(file, Some(recipe), Some(seed)).map_err(value_err)
}

/// Trains a recipe's policy into `out`; `config` is optional config-file
/// JSON (e.g. a smaller CEM budget). Returns the report lines.
#[pyfunction]
#[pyo3(signature = (recipe, out, seed = 0, config = None))]
fn train(py: Python<'_>, recipe: &str, out: PathBuf, seed: u64, config: Option<&str>) -> PyResult<Vec<String>> {
    let cfg = resolve(recipe, seed, config)?;
    py.detach(|| commands::cmd_train(&cfg, &out, |_| {}))
        .map(|r| r.lines)
        .map_err(command_err)
}

/// Evaluates a recipe across lengths; returns `(length, mean_velocity,
/// std_velocity, collisions)` rows.
#[pyfunction]
#[pyo3(signature = (recipe, out, seed = 0, params = None, config = None))]
fn evaluate(
    py: Python<'_>,
    recipe: &str,
    out: PathBuf,
    seed: u64,
    params: Option<PathBuf>,
    config: Option<&str>,
) -> PyResult<Vec<(f64, f64, f64, usize)>> {
    let cfg = resolve(recipe, seed, config)?;
    let (_, stats) = py
        .detach(|| commands::cmd_eval(&cfg, &out, params.as_deref()))
        .map_err(command_err)?;
    Ok(stats
        .iter()
        .map(|s| (s.episodes[0].length, s.mean_velocity, s.std_velocity, s.collisions))
        .collect())
}

/// Step-by-step environment. Observations are flat lists: `[v, dv, gap]`
/// per AV under partial observation, positions then velocities (then
/// lanes) of every vehicle under full observation.
#[pyclass(unsendable)]
struct Env {
    inner: CoreEnv,
}

#[pymethods]
impl Env {
    #[new]
    fn new(scenario: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreEnv::new(scenario_from(scenario)?).map_err(value_err)?,
        })
    }

    #[pyo3(signature = (seed = 0, length = None))]
    fn reset(&mut self, seed: u64, length: Option<f64>) -> PyResult<Vec<f64>> {
        let obs = self.inner.reset(seed, length_choice(length)).map_err(value_err)?;
        Ok(obs.flat())
    }

    /// Returns `(observation, reward, done, collided)`.
    fn step(&mut self, actions: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let t = self.inner.step(&actions).map_err(value_err)?;
        Ok((t.observation.flat(), t.reward, t.done, t.collided))
    }

    #[getter]
    fn action_size(&self) -> usize {
        self.inner.action_size()
    }

    #[getter]
    fn observation_size(&self) -> usize {
        self.inner.observation_size()
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.done()
    }

    #[getter]
    fn length(&self) -> f64 {
        self.inner.world().length()
    }

    #[getter]
    fn positions(&self) -> Vec<f64> {
        self.inner.world().vehicles.iter().map(|v| v.s).collect()
    }

    #[getter]
    fn velocities(&self) -> Vec<f64> {
        self.inner.world().vehicles.iter().map(|v| v.velocity).collect()
    }

    /// Number of agents in the current observation.
    fn agents(&self) -> usize {
        self.inner.observation().agents()
    }
}

#[pymodule]
fn mixflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", mixflow_core::VERSION)?;
    m.add_function(wrap_pyfunction!(uniform_flow_velocity, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium_velocity, m)?)?;
    m.add_function(wrap_pyfunction!(stop_and_go_velocity, m)?)?;
    m.add_function(wrap_pyfunction!(recipe_names, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_json, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<Env>()?;
    Ok(())
}
