//! Python bindings: datasets, objectives, trained models, the optimizers and
//! the reward functions.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use qgd_core::config::RunConfig;
use qgd_core::descent::{self, LineSearchConfig, OptRunTrace, QgdOptions};
use qgd_core::dqn::{Action, ActionSet, DqnModel};
use qgd_core::features::{Feature, StateVector, NUM_FEATURES};
use qgd_core::nn::ParamVector;
use qgd_core::objective::{self, ObjectiveFn};
use qgd_core::{harness, rewards, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        e if e.is_numeric() => PyArithmeticError::new_err(e.to_string()),
        e @ Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn variant(name: &str) -> PyResult<ActionSet> {
    match name {
        "v1" => Ok(ActionSet::V1),
        "v2" => Ok(ActionSet::V2),
        other => Err(PyValueError::new_err(format!(
            "unknown variant `{other}`, expected v1 or v2"
        ))),
    }
}

#[pyclass(name = "Dataset", module = "qgd", frozen)]
struct PyDataset(objective::Dataset);

#[pymethods]
impl PyDataset {
    /// `k` Gaussian clusters in `d` dimensions, `n` samples.
    #[staticmethod]
    #[pyo3(signature = (seed, n, d, k, spread = 0.3))]
    fn generate(seed: u64, n: usize, d: usize, k: usize, spread: f64) -> PyResult<Self> {
        objective::generate_dataset(seed, n, d, k, spread)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        objective::Dataset::load(path).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    fn checksum(&self) -> String {
        self.0.checksum()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.0.classes()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels().to_vec()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.0.len() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.0.row(i).to_vec())
    }
}

/// Mean cross-entropy of a softmax classifier over a dataset.
#[pyclass(name = "Objective", module = "qgd", frozen)]
struct PyObjective(ObjectiveFn);

#[pymethods]
impl PyObjective {
    #[new]
    fn new(layer_sizes: Vec<usize>, dataset: &PyDataset) -> PyResult<Self> {
        let arch =
            qgd_core::nn::Architecture::new(layer_sizes, qgd_core::nn::OutputHead::SoftmaxXent).map_err(py_err)?;
        ObjectiveFn::new(arch, dataset.0.clone()).map(Self).map_err(py_err)
    }

    /// The objective a config builds for `seed`.
    #[staticmethod]
    fn from_config(config: &PyRunConfig, seed: u64) -> PyResult<Self> {
        config.0.objective.build(seed).map(Self).map_err(py_err)
    }

    fn evaluate(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.evaluate(&x).map_err(py_err)
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.gradient(&x).map(ParamVector::into_inner).map_err(py_err)
    }

    fn initial_point(&self, seed: u64) -> Vec<f64> {
        self.0.initial_point(seed).into_inner()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn f_lb(&self) -> f64 {
        self.0.f_lb()
    }
}

#[pyclass(name = "RunConfig", module = "qgd", frozen)]
struct PyRunConfig(RunConfig);

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    fn desk() -> Self {
        Self(RunConfig::desk())
    }

    #[staticmethod]
    fn paper() -> Self {
        Self(RunConfig::paper())
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        RunConfig::load(path).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        RunConfig::from_toml(text).map(Self).map_err(py_err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self(self.0.clone().with_seed(seed))
    }

    fn with_out_dir(&self, dir: PathBuf) -> Self {
        Self(self.0.clone().with_out_dir(dir))
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.0.experiment.seeds.clone()
    }
}

/// A trained deep Q-network.
#[pyclass(name = "DqnModel", module = "qgd", frozen)]
struct PyDqnModel(DqnModel);

#[pymethods]
impl PyDqnModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        DqnModel::load(path).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        DqnModel::from_bytes(data).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.0.action_set.label()
    }

    #[getter]
    fn actions(&self) -> Vec<&'static str> {
        self.0.action_set.actions().iter().map(|a| a.name()).collect()
    }

    fn q_values(&self, state: Vec<f64>) -> PyResult<Vec<f64>> {
        let state: [f64; NUM_FEATURES] = state
            .try_into()
            .map_err(|_| PyValueError::new_err(format!("state must have {NUM_FEATURES} entries")))?;
        self.0.q_values(&StateVector(state)).map_err(py_err)
    }

    fn greedy_action(&self, state: Vec<f64>) -> PyResult<&'static str> {
        let q = self.q_values(state)?;
        let a = self.0.action(qgd_core::dqn::argmax(&q)).map_err(py_err)?;
        Ok(a.name())
    }
}

/// One optimizer run.
#[pyclass(name = "Trace", module = "qgd", frozen)]
struct PyTrace(OptRunTrace);

#[pymethods]
impl PyTrace {
    #[getter]
    fn optimizer(&self) -> &str {
        &self.0.optimizer
    }

    #[getter]
    fn start_f(&self) -> f64 {
        self.0.start_f
    }

    #[getter]
    fn final_f(&self) -> f64 {
        self.0.final_f
    }

    #[getter]
    fn evaluations(&self) -> usize {
        self.0.evaluations
    }

    #[getter]
    fn diverged(&self) -> bool {
        self.0.diverged
    }

    #[getter]
    fn halving_frequency(&self) -> f64 {
        self.0.halving_frequency()
    }

    /// `(t, alpha, f, action)` per step.
    #[getter]
    fn steps(&self) -> Vec<(usize, f64, f64, &'static str)> {
        self.0
            .steps
            .iter()
            .map(|s| (s.t, s.alpha, s.f, s.action.name()))
            .collect()
    }

    fn count(&self, action: &str) -> PyResult<usize> {
        let a = match action {
            "half" => Action::Half,
            "double" => Action::Double,
            "accept" => Action::Accept,
            other => return Err(PyValueError::new_err(format!("unknown action `{other}`"))),
        };
        Ok(self.0.count(a))
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.0
            .write_csv(&mut buf)
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(String::from_utf8(buf).expect("csv is ascii"))
    }

    fn __len__(&self) -> usize {
        self.0.steps.len()
    }
}

#[pyfunction]
#[pyo3(signature = (objective, x1, horizon, alpha_c = 4.0))]
fn armijo(objective: &PyObjective, x1: Vec<f64>, horizon: usize, alpha_c: f64) -> PyResult<PyTrace> {
    let cfg = LineSearchConfig::armijo(alpha_c);
    descent::linesearch_gd(&objective.0, &cfg, &ParamVector::from(x1), horizon)
        .map(PyTrace)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (objective, x1, horizon, alpha_c = 4.0))]
fn nonmonotone(objective: &PyObjective, x1: Vec<f64>, horizon: usize, alpha_c: f64) -> PyResult<PyTrace> {
    let cfg = LineSearchConfig::nonmonotone(alpha_c);
    descent::linesearch_gd(&objective.0, &cfg, &ParamVector::from(x1), horizon)
        .map(PyTrace)
        .map_err(py_err)
}

#[pyfunction]
fn fixed_gd(objective: &PyObjective, x1: Vec<f64>, horizon: usize, alpha: f64) -> PyResult<PyTrace> {
    descent::fixed_gd(&objective.0, alpha, &ParamVector::from(x1), horizon)
        .map(PyTrace)
        .map_err(py_err)
}

/// Gradient descent with the learning rate chosen greedily by `model`.
/// `pinned` names features forced to zero.
#[pyfunction]
#[pyo3(signature = (objective, model, x1, window, horizon, pinned = Vec::new()))]
fn qgd_run(
    objective: &PyObjective,
    model: &PyDqnModel,
    x1: Vec<f64>,
    window: usize,
    horizon: usize,
    pinned: Vec<String>,
) -> PyResult<PyTrace> {
    let pinned = pinned
        .iter()
        .map(|n| Feature::from_name(n).ok_or_else(|| PyValueError::new_err(format!("unknown feature `{n}`"))))
        .collect::<PyResult<Vec<_>>>()?;
    let opts = QgdOptions {
        pinned,
        ..QgdOptions::default()
    };
    descent::qgd_run(&objective.0, &model.0, &ParamVector::from(x1), window, horizon, &opts)
        .map(PyTrace)
        .map_err(py_err)
}

/// Trains one model per configured seed; returns `(seed, model, log)` with
/// log rows `(episode, rmax, final_f, epsilon)`.
#[pyfunction]
#[pyo3(signature = (config, variant_name = "v1"))]
#[allow(clippy::type_complexity)]
fn train(
    py: Python<'_>,
    config: &PyRunConfig,
    variant_name: &str,
) -> PyResult<Vec<(u64, PyDqnModel, Vec<(usize, f64, f64, f64)>)>> {
    let set = variant(variant_name)?;
    let cfg = config.0.clone();
    let outcomes = py.detach(|| harness::train(&cfg, set, false)).map_err(py_err)?;
    Ok(outcomes
        .into_iter()
        .map(|o| {
            let log = o
                .log
                .iter()
                .map(|r| (r.episode, r.rmax, r.final_f, r.epsilon))
                .collect();
            (o.seed, PyDqnModel(o.model), log)
        })
        .collect())
}

type CompareRow = (u64, String, f64, f64, f64);

/// Runs the comparison; returns one `(seed, optimizer, initial_f, final_f,
/// halving_frequency)` row per run.
#[pyfunction]
fn compare(py: Python<'_>, config: &PyRunConfig) -> PyResult<Vec<CompareRow>> {
    let cfg = config.0.clone();
    let report = py.detach(|| harness::compare(&cfg)).map_err(py_err)?;
    Ok(report
        .rows
        .into_iter()
        .map(|r| (r.seed, r.optimizer, r.initial_f, r.final_f, r.halving_frequency))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (f, f_lb, c = 0.1))]
fn reward_id(f: f64, f_lb: f64, c: f64) -> PyResult<f64> {
    rewards::reward_id(f, f_lb, c).map_err(py_err)
}

#[pyfunction]
fn reward_sd(f_prev: f64, f_curr: f64) -> f64 {
    rewards::reward_sd(f_prev, f_curr)
}

#[pyfunction]
fn reward_oc(f_prev: f64, f_curr: f64) -> f64 {
    rewards::reward_oc(f_prev, f_curr)
}

#[pyfunction]
fn discounted_returns(rewards: Vec<f64>, gamma: f64) -> Vec<f64> {
    rewards::discounted_returns(&rewards, gamma)
}

#[pymodule]
fn qgd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyObjective>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyDqnModel>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(armijo, m)?)?;
    m.add_function(wrap_pyfunction!(nonmonotone, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_gd, m)?)?;
    m.add_function(wrap_pyfunction!(qgd_run, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(reward_id, m)?)?;
    m.add_function(wrap_pyfunction!(reward_sd, m)?)?;
    m.add_function(wrap_pyfunction!(reward_oc, m)?)?;
    m.add_function(wrap_pyfunction!(discounted_returns, m)?)?;
    Ok(())
}
