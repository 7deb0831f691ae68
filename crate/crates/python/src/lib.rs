use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use mcu_core::baselines::{self, OptimizerConfig};
use mcu_core::data::{ingest_csv, CsvSchema};
use mcu_core::metrics;
use mcu_core::recipe::{self, ExperimentRecipe};
use mcu_core::sampler::{self, Init, Proposal};
use mcu_core::store;
use mcu_core::{ErrorCategory, Estimator, FeatureMap, LabeledDataset, McuError, ParameterVector, Task};

create_exception!(mcunlearn, UnlearnError, PyException);
create_exception!(mcunlearn, UsageError, UnlearnError);
create_exception!(mcunlearn, DataError, UnlearnError);
create_exception!(mcunlearn, NumericalError, UnlearnError);

fn to_py(e: McuError) -> PyErr {
    let msg = e.to_string();
    match e.category() {
        ErrorCategory::Usage => UsageError::new_err(msg),
        ErrorCategory::Data => DataError::new_err(msg),
        ErrorCategory::Numerical => NumericalError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for mcu_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn parse_task(task: &str) -> PyResult<Task> {
    match task {
        "binary-classification" | "classification" => Ok(Task::BinaryClassification),
        "regression" => Ok(Task::Regression),
        other => Err(UsageError::new_err(format!("unknown task '{other}'"))),
    }
}

fn theta(values: Vec<f64>) -> PyResult<ParameterVector> {
    ParameterVector::new(values).py()
}

/// Model family, feature map and prior.
#[pyclass(name = "ModelSpec", frozen, from_py_object)]
#[derive(Clone)]
struct PyModelSpec {
    inner: mcu_core::ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    /// `family` is "logistic" or "linear"; `feature_map` is "identity" or
    /// "polynomial:<degree>".
    #[new]
    #[pyo3(signature = (family = "logistic", feature_map = "identity", prior_variance = 3.0, noise_variance = None))]
    fn new(family: &str, feature_map: &str, prior_variance: f64, noise_variance: Option<f64>) -> PyResult<Self> {
        let map = match feature_map.split_once(':') {
            None if feature_map == "identity" => FeatureMap::Identity,
            Some(("polynomial", d)) => FeatureMap::Polynomial {
                degree: d.parse().map_err(|_| UsageError::new_err(format!("bad degree '{d}'")))?,
            },
            _ => return Err(UsageError::new_err(format!("unknown feature map '{feature_map}'"))),
        };
        let inner = match family {
            "logistic" => mcu_core::ModelSpec::logistic(map, prior_variance).py()?,
            "linear" => {
                let noise = noise_variance.ok_or_else(|| UsageError::new_err("linear models need noise_variance"))?;
                mcu_core::ModelSpec::linear(map, prior_variance, noise).py()?
            }
            other => return Err(UsageError::new_err(format!("unknown family '{other}'"))),
        };
        Ok(PyModelSpec { inner })
    }

    fn log_joint(&self, theta_: Vec<f64>, data: &PyDataset) -> PyResult<f64> {
        self.inner.log_joint(&theta(theta_)?, &data.inner).py()
    }

    fn log_likelihood(&self, theta_: Vec<f64>, data: &PyDataset) -> PyResult<f64> {
        self.inner.log_likelihood(&theta(theta_)?, &data.inner).py()
    }

    fn predict(&self, theta_: Vec<f64>, x: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&theta(theta_)?, &x).py()
    }

    fn param_dim(&self, feature_dim: usize) -> PyResult<usize> {
        self.inner.param_dim(feature_dim).py()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Labelled rows with stable ids.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: LabeledDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (x, y, task = "binary-classification"))]
    fn new(x: Vec<Vec<f64>>, y: Vec<f64>, task: &str) -> PyResult<Self> {
        let task = parse_task(task)?;
        let dim = x.first().map_or(0, Vec::len);
        if x.len() != y.len() {
            return Err(UsageError::new_err(format!("{} feature rows but {} labels", x.len(), y.len())));
        }
        let inner = LabeledDataset::new(task, dim, x.into_iter().zip(y)).py()?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, label, features = None, task = "binary-classification"))]
    fn from_csv(path: PathBuf, label: String, features: Option<Vec<String>>, task: &str) -> PyResult<Self> {
        let schema = CsvSchema { label, features, task: parse_task(task)? };
        Ok(PyDataset { inner: ingest_csv(&path, &schema).py()? })
    }

    /// `(remaining, erased)` for the given row positions.
    fn partition(&self, erased: Vec<usize>) -> PyResult<(PyDataset, PyDataset)> {
        let (r, e) = self.inner.partition(&erased).py()?;
        Ok((PyDataset { inner: r }, PyDataset { inner: e }))
    }

    fn subset(&self, positions: Vec<usize>) -> PyResult<PyDataset> {
        Ok(PyDataset { inner: self.inner.subset(&positions).py()? })
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn labels(&self) -> Vec<f64> {
        self.inner.labels().to_vec()
    }

    fn features(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.len() {
            return Err(UsageError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.features(i).to_vec())
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Samples and their stored log-joint values.
#[pyclass(name = "CandidateSet", frozen)]
struct PyCandidateSet {
    inner: store::CandidateSet,
}

#[pymethods]
impl PyCandidateSet {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCandidateSet { inner: store::load_from_path(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        store::save_to_path(&self.inner, &path).py()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn spec(&self) -> PyModelSpec {
        PyModelSpec { inner: *self.inner.spec() }
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.provenance().seeds.clone()
    }

    fn candidates(&self) -> Vec<Vec<f64>> {
        self.inner.candidates().iter().map(|c| c.to_vec()).collect()
    }

    fn h_values(&self) -> Vec<f64> {
        self.inner.h_values().to_vec()
    }

    fn mean(&self) -> Vec<f64> {
        self.inner.mean()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Outcome of one erase request.
#[pyclass(name = "UnlearnResult", frozen, get_all)]
struct PyUnlearnResult {
    g_values: Vec<f64>,
    weights: Vec<f64>,
    map_index: usize,
    map_candidate: Vec<f64>,
    weighted_mean: Vec<f64>,
    weighted_std_error: Vec<f64>,
    ess: f64,
    alpha: f64,
}

#[pymethods]
impl PyUnlearnResult {
    fn __repr__(&self) -> String {
        format!("UnlearnResult(candidates={}, ess={:.2}, map_index={})", self.weights.len(), self.ess, self.map_index)
    }
}

#[pyfunction]
#[pyo3(signature = (
    spec, data, num_samples = 1000, alpha = 1.0, proposal_step = 0.005, proposal = "isotropic",
    burn_in = None, thin = 1, seed = 0, init = None, adapt_step = false,
))]
#[allow(clippy::too_many_arguments)]
fn sample_posterior(
    py: Python<'_>,
    spec: &PyModelSpec,
    data: &PyDataset,
    num_samples: usize,
    alpha: f64,
    proposal_step: f64,
    proposal: &str,
    burn_in: Option<usize>,
    thin: usize,
    seed: u64,
    init: Option<Vec<f64>>,
    adapt_step: bool,
) -> PyResult<PyCandidateSet> {
    let proposal = match proposal {
        "isotropic" => Proposal::Isotropic,
        "laplace" => Proposal::Laplace,
        other => return Err(UsageError::new_err(format!("unknown proposal '{other}'"))),
    };
    let cfg = sampler::SamplerConfig {
        num_samples,
        burn_in,
        thin,
        proposal_step,
        proposal,
        alpha,
        seed,
        init: init.map_or(Init::MapEstimate, Init::Explicit),
        adapt_step,
    };
    let (spec, data) = (spec.inner, &data.inner);
    let set = py.detach(|| sampler::sample_posterior(&spec, data, &cfg)).py()?;
    Ok(PyCandidateSet { inner: set })
}

#[pyfunction]
fn unlearn(py: Python<'_>, candidates: &PyCandidateSet, erased: &PyDataset) -> PyResult<PyUnlearnResult> {
    let r = py.detach(|| mcu_core::unlearn(&candidates.inner, &erased.inner)).py()?;
    Ok(PyUnlearnResult {
        map_candidate: r.map_candidate.to_vec(),
        weighted_mean: r.weighted_mean.to_vec(),
        g_values: r.g_values,
        weights: r.weights,
        map_index: r.map_index,
        weighted_std_error: r.weighted_std_error,
        ess: r.ess,
        alpha: r.alpha,
    })
}

#[pyfunction]
fn acceptance_ratio(h_proposed: f64, h_current: f64, alpha: f64) -> PyResult<f64> {
    sampler::acceptance_ratio(h_proposed, h_current, alpha).py()
}

#[pyfunction]
fn train_map(spec: &PyModelSpec, data: &PyDataset) -> PyResult<Vec<f64>> {
    Ok(baselines::train_map(&spec.inner, &data.inner, &OptimizerConfig::default()).py()?.theta.into_inner())
}

#[pyfunction]
fn retrain(spec: &PyModelSpec, data: &PyDataset, erased: Vec<usize>) -> PyResult<Vec<f64>> {
    Ok(baselines::retrain(&spec.inner, &data.inner, &erased, &OptimizerConfig::default()).py()?.theta.into_inner())
}

#[pyfunction]
fn influence_unlearn(spec: &PyModelSpec, theta_map: Vec<f64>, data: &PyDataset, erased: Vec<usize>) -> PyResult<Vec<f64>> {
    Ok(baselines::influence_unlearn(&spec.inner, &theta(theta_map)?, &data.inner, &erased).py()?.into_inner())
}

#[pyfunction]
fn evaluate_accuracy(spec: &PyModelSpec, theta_: Vec<f64>, data: &PyDataset) -> PyResult<f64> {
    metrics::evaluate_accuracy(&spec.inner, &theta(theta_)?, &data.inner).py()
}

#[pyfunction]
fn evaluate_mse(spec: &PyModelSpec, theta_: Vec<f64>, data: &PyDataset) -> PyResult<f64> {
    metrics::evaluate_mse(&spec.inner, &theta(theta_)?, &data.inner).py()
}

/// `(subset_id, subset_size, accuracy_before, accuracy_after, delta, ess)`
type InfluenceRow = (String, usize, f64, f64, f64, f64);
/// `(model_tag, split, accuracy, wall_time_seconds, subset_id)`
type MetricsRow = (String, String, f64, f64, Option<usize>);

/// Ranks `(id, dataset)` subsets by the accuracy change their removal causes.
/// Rows come back sorted by decreasing delta.
#[pyfunction]
#[pyo3(signature = (candidates, subsets, eval_data, estimator = "weighted-mean"))]
fn subset_influence(
    py: Python<'_>,
    candidates: &PyCandidateSet,
    subsets: Vec<(String, PyRef<'_, PyDataset>)>,
    eval_data: &PyDataset,
    estimator: &str,
) -> PyResult<Vec<InfluenceRow>> {
    let est: Estimator = estimator.parse().py()?;
    let owned: Vec<(String, LabeledDataset)> = subsets.iter().map(|(id, d)| (id.clone(), d.inner.clone())).collect();
    let report = py
        .detach(|| mcu_core::explain::subset_influence(&candidates.inner, &owned, &eval_data.inner, "eval", est))
        .py()?;
    Ok(report
        .entries
        .into_iter()
        .map(|e| (e.subset_id, e.subset_size, e.accuracy_before, e.accuracy_after, e.delta, e.ess))
        .collect())
}

/// Runs a TOML recipe and returns its metric rows as
/// `(model_tag, split, accuracy, wall_time_seconds, subset_id)` tuples.
#[pyfunction]
#[pyo3(signature = (path, out_dir, seed = None))]
fn run_recipe(
    py: Python<'_>,
    path: PathBuf,
    out_dir: PathBuf,
    seed: Option<u64>,
) -> PyResult<Vec<MetricsRow>> {
    let mut r = ExperimentRecipe::from_path(&path).py()?;
    if let Some(s) = seed {
        r.seed = s;
    }
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let outcome = py.detach(|| recipe::run_recipe(&r, &base, &out_dir)).py()?;
    Ok(outcome
        .records
        .into_iter()
        .map(|m| (m.model_tag, m.split.to_string(), m.accuracy, m.wall_time_seconds, m.subset_id))
        .collect())
}

#[pymodule]
fn mcunlearn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("UnlearnError", py.get_type::<UnlearnError>())?;
    m.add("UsageError", py.get_type::<UsageError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyCandidateSet>()?;
    m.add_class::<PyUnlearnResult>()?;
    m.add_function(wrap_pyfunction!(sample_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(unlearn, m)?)?;
    m.add_function(wrap_pyfunction!(acceptance_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(train_map, m)?)?;
    m.add_function(wrap_pyfunction!(retrain, m)?)?;
    m.add_function(wrap_pyfunction!(influence_unlearn, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_mse, m)?)?;
    m.add_function(wrap_pyfunction!(subset_influence, m)?)?;
    m.add_function(wrap_pyfunction!(run_recipe, m)?)?;
    Ok(())
}
