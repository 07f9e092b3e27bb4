//! Python bindings for the preference-pair collection library.
//!
//! Configs, checkpoints and datasets cross the boundary as JSON, JSONL or CSV
//! text so that files written from Python and from the CLI are interchangeable.

use activeduel::enn::{EnnConfig, EnnModel, enn_init, feature_matrix};
use activeduel::export::{jsonl_string, read_jsonl, write_metrics_csv};
use activeduel::oracle::{EnvConfig, Environment as CoreEnvironment};
use activeduel::pipeline::{Checkpoint, Pipeline as CorePipeline, RunConfig, prompt_candidates};
use activeduel::rng::{domain, stream};
use activeduel::selection::{FixedScores, GeneratorPair, SelectionContext, select};
use activeduel::{Candidate, CandidateSet, Method};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_or_default<T: Default + for<'de> serde::Deserialize<'de>>(json: Option<&str>) -> PyResult<T> {
    match json {
        Some(text) => serde_json::from_str(text).map_err(py_err),
        None => Ok(T::default()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_pyobject(py)?.into_any(),
            (None, Some(i)) => i.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, to_py(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(value).map_err(py_err)?)
}

/// Ensemble reward estimate for one candidate.
#[pyclass(module = "activeduel_py", frozen, from_py_object)]
#[derive(Clone)]
struct RewardEstimate(activeduel::RewardEstimate);

#[pymethods]
impl RewardEstimate {
    #[new]
    #[pyo3(signature = (mean, std, beta = 1.0))]
    fn new(mean: f64, std: f64, beta: f64) -> PyResult<Self> {
        activeduel::RewardEstimate::new(mean, std, beta).map(Self).map_err(py_err)
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.0.mean()
    }

    #[getter]
    fn std(&self) -> f64 {
        self.0.std()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta()
    }

    #[getter]
    fn lower(&self) -> f64 {
        self.0.lower()
    }

    #[getter]
    fn upper(&self) -> f64 {
        self.0.upper()
    }

    fn __repr__(&self) -> String {
        format!("RewardEstimate(mean={}, std={}, beta={})", self.0.mean(), self.0.std(), self.0.beta())
    }
}

#[pyfunction]
fn sigmoid(x: f64) -> PyResult<f64> {
    activeduel::sigmoid(x).map_err(py_err)
}

#[pyfunction]
fn ucb_pref_prob(a: &RewardEstimate, b: &RewardEstimate) -> PyResult<f64> {
    activeduel::ucb_pref_prob(&a.0, &b.0).map_err(py_err)
}

#[pyfunction]
fn lcb_pref_prob(a: &RewardEstimate, b: &RewardEstimate) -> PyResult<f64> {
    activeduel::lcb_pref_prob(&a.0, &b.0).map_err(py_err)
}

#[pyfunction]
fn pair_width(a: &RewardEstimate, b: &RewardEstimate) -> PyResult<f64> {
    activeduel::pair_width(&a.0, &b.0).map_err(py_err)
}

#[pyfunction]
fn methods() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.name()).collect()
}

/// Select a pair from `m` candidates. Candidate `j` belongs to generator `j`.
/// Returns `(first, second, fallback_used, annotations_spent)`.
#[pyfunction]
#[pyo3(signature = (method, m, estimates = None, scores = None, seed = 0, epsilon = None, maxiter = None, generators = None))]
#[allow(clippy::too_many_arguments)]
fn select_pair(
    method: &str,
    m: usize,
    estimates: Option<Vec<RewardEstimate>>,
    scores: Option<Vec<f64>>,
    seed: u64,
    epsilon: Option<f64>,
    maxiter: Option<usize>,
    generators: Option<(usize, usize)>,
) -> PyResult<(usize, usize, bool, usize)> {
    let method: Method = method.parse().map_err(py_err)?;
    let set = CandidateSet { prompt_id: 0, candidates: (0..m).map(|j| Candidate::new(j, j, vec![])).collect() };
    let estimates: Option<Vec<activeduel::RewardEstimate>> =
        estimates.map(|v| v.into_iter().map(|e| e.0).collect());
    let mut judge = scores.map(FixedScores::new);
    let mut rng = stream(seed, domain::SELECTION, &[]);
    let mut ctx = SelectionContext::new(&set, &mut rng);
    if let Some(e) = epsilon {
        ctx.epsilon = e;
    }
    if let Some(k) = maxiter {
        ctx.maxiter = k;
    }
    if let Some(est) = estimates.as_deref() {
        ctx = ctx.with_estimates(est);
    }
    if let Some(j) = judge.as_mut() {
        ctx = ctx.with_judge(j);
    }
    let g = generators.map(|(strong, weak)| GeneratorPair { strong, weak });
    let p = select(method, &mut ctx, g).map_err(py_err)?;
    Ok((p.first_id, p.second_id, p.fallback_used, p.annotations_spent))
}

/// Synthetic generator environment.
#[pyclass(module = "activeduel_py", frozen)]
struct Environment(CoreEnvironment);

#[pymethods]
impl Environment {
    #[new]
    #[pyo3(signature = (config_json = None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let config: EnvConfig = parse_or_default(config_json)?;
        CoreEnvironment::new(config).map(Self).map_err(py_err)
    }

    #[getter]
    fn num_generators(&self) -> usize {
        self.0.num_generators()
    }

    fn strongest_generator(&self) -> usize {
        self.0.strongest_generator()
    }

    fn weakest_generator(&self) -> usize {
        self.0.weakest_generator()
    }

    /// `[(candidate_id, generator_id, features), ...]` for a prompt.
    fn candidates(&self, prompt_id: usize) -> PyResult<Vec<(usize, usize, Vec<f64>)>> {
        let set = prompt_candidates(&self.0, prompt_id).map_err(py_err)?;
        Ok(set.candidates.into_iter().map(|c| (c.candidate_id, c.generator_id, c.feature_vec)).collect())
    }

    fn dump_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.0.dump()).map_err(py_err)
    }
}

/// Ensemble reward model.
#[pyclass(module = "activeduel_py")]
struct EnnEnsemble(EnnModel);

#[pymethods]
impl EnnEnsemble {
    #[new]
    #[pyo3(signature = (config_json = None, seed = 0))]
    fn new(config_json: Option<&str>, seed: u64) -> PyResult<Self> {
        let config: EnnConfig = parse_or_default(config_json)?;
        enn_init(config, seed).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(Self).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(py_err)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.0.num_params()
    }

    #[getter]
    fn iteration_count(&self) -> usize {
        self.0.iteration_count()
    }

    fn anchor_digest(&self) -> String {
        self.0.anchor_digest()
    }

    fn predict(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<RewardEstimate>> {
        let dim = self.0.config().feature_dim;
        let x = feature_matrix(features.iter().map(|r| r.as_slice()), dim).map_err(py_err)?;
        let est = self.0.predict_batch(x.view()).map_err(py_err)?;
        Ok(est.into_iter().map(RewardEstimate).collect())
    }
}

/// Resumable collection loop.
#[pyclass(module = "activeduel_py")]
struct Pipeline(CorePipeline);

#[pymethods]
impl Pipeline {
    #[new]
    #[pyo3(signature = (config_json = None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let config: RunConfig = parse_or_default(config_json)?;
        CorePipeline::new(config).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn from_checkpoint_json(text: &str) -> PyResult<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(py_err)?;
        CorePipeline::from_checkpoint(ckpt).map(Self).map_err(py_err)
    }

    /// Run one batch; returns its metrics as a dict, or `None` when done.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        match self.0.step().map_err(py_err)? {
            Some(m) => Ok(Some(serialize_to_py(py, m)?)),
            None => Ok(None),
        }
    }

    fn run_to_end(&mut self) -> PyResult<()> {
        self.0.run_to_end().map_err(py_err)
    }

    #[getter]
    fn is_done(&self) -> bool {
        self.0.is_done()
    }

    #[getter]
    fn next_iteration(&self) -> usize {
        self.0.next_iteration()
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize_to_py(py, &self.0.metrics())
    }

    fn dataset_jsonl(&self) -> PyResult<String> {
        jsonl_string(&self.0.dataset()).map_err(py_err)
    }

    fn metrics_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, self.0.metrics()).map_err(py_err)?;
        String::from_utf8(buf).map_err(py_err)
    }

    fn checkpoint_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0.checkpoint()).map_err(py_err)
    }
}

/// Summary report for a JSONL dataset, as printed by the `analyze` command.
#[pyfunction]
fn analyze(jsonl: &str) -> PyResult<String> {
    let data = read_jsonl(jsonl.as_bytes()).map_err(py_err)?;
    activeduel::analysis::analyze(&data, None).map(|r| r.render()).map_err(py_err)
}

#[pymodule]
fn activeduel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RewardEstimate>()?;
    m.add_class::<Environment>()?;
    m.add_class::<EnnEnsemble>()?;
    m.add_class::<Pipeline>()?;
    m.add_function(wrap_pyfunction!(sigmoid, m)?)?;
    m.add_function(wrap_pyfunction!(ucb_pref_prob, m)?)?;
    m.add_function(wrap_pyfunction!(lcb_pref_prob, m)?)?;
    m.add_function(wrap_pyfunction!(pair_width, m)?)?;
    m.add_function(wrap_pyfunction!(methods, m)?)?;
    m.add_function(wrap_pyfunction!(select_pair, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    Ok(())
}
