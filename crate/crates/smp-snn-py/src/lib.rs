//! Python bindings for the smp-snn training engine.
//!
//! The module mirrors the Rust API at the granularity a notebook needs:
//! network configuration, dataset generation, control initialization,
//! training, forward simulation, averaged gradients/costs, and the
//! evaluation reports (confidence bands, classification metrics, parameter
//! estimates, gradient checks). Structured report values cross the boundary
//! as plain dicts and lists; configs and controls round-trip through the
//! same JSON representation the CLI uses.

use nalgebra::DVector;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use smp_snn::adjoint::Scheme;
use smp_snn::dynamics::{self, ControlPath, NetConfig as CoreNetConfig};
use smp_snn::error::SmpError;
use smp_snn::eval;
use smp_snn::rng::StreamRng;
use smp_snn::tasks::{self, Dataset as CoreDataset, TaskSpec};
use smp_snn::trainer::{self, TrainConfig};
use smp_snn::verify;

fn err(e: SmpError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_scheme(name: &str) -> PyResult<Scheme> {
    match name {
        "right-point" => Ok(Scheme::RightPoint),
        "left-point" => Ok(Scheme::LeftPoint),
        other => Err(PyValueError::new_err(format!(
            "unknown scheme {other:?}; expected \"right-point\" or \"left-point\""
        ))),
    }
}

/// Network shape and step size.
#[pyclass(name = "NetConfig", module = "smp_snn_py", skip_from_py_object)]
#[derive(Clone)]
struct PyNetConfig {
    inner: CoreNetConfig,
}

#[pymethods]
impl PyNetConfig {
    #[new]
    #[pyo3(signature = (width, depth, step_size, input_dim, label_dim))]
    fn new(width: usize, depth: usize, step_size: f64, input_dim: usize, label_dim: usize) -> Self {
        Self {
            inner: CoreNetConfig {
                width,
                depth,
                step_size,
                input_dim,
                label_dim,
            },
        }
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth
    }

    #[getter]
    fn step_size(&self) -> f64 {
        self.inner.step_size
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim
    }

    #[getter]
    fn label_dim(&self) -> usize {
        self.inner.label_dim
    }

    fn __repr__(&self) -> String {
        format!(
            "NetConfig(width={}, depth={}, step_size={}, input_dim={}, label_dim={})",
            self.inner.width,
            self.inner.depth,
            self.inner.step_size,
            self.inner.input_dim,
            self.inner.label_dim
        )
    }
}

/// A generated labeled dataset.
#[pyclass(name = "Dataset", module = "smp_snn_py", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: CoreDataset,
}

#[pymethods]
impl PyDataset {
    /// Generate a dataset from a task spec given as JSON, e.g.
    /// `{"task": "circle-classification", "count": 100, "seed": 1}`.
    #[staticmethod]
    fn generate(task_json: &str) -> PyResult<Self> {
        let spec: TaskSpec = serde_json::from_str(task_json)
            .map_err(|e| PyValueError::new_err(format!("invalid task spec: {e}")))?;
        Ok(Self {
            inner: tasks::generate(&spec).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: tasks::read_dataset(path.as_ref()).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        tasks::write_dataset(&self.inner, path.as_ref()).map_err(err)
    }

    #[getter]
    fn task_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.task).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim
    }

    #[getter]
    fn label_dim(&self) -> usize {
        self.inner.label_dim
    }

    fn inputs(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.input.clone()).collect()
    }

    fn labels(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.label.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(task={}, samples={})",
            self.inner.task.name(),
            self.inner.len()
        )
    }
}

/// The trained object: per-layer weights, biases, and diffusion coefficients.
#[pyclass(name = "Controls", module = "smp_snn_py", skip_from_py_object)]
#[derive(Clone)]
struct PyControls {
    inner: ControlPath,
}

#[pymethods]
impl PyControls {
    /// Standard initialization: W ~ N(0,1), b = 0.05, sigma = 0.01.
    #[staticmethod]
    fn init(net: &PyNetConfig, seed: u64) -> Self {
        let mut rng = StreamRng::new(seed);
        Self {
            inner: trainer::init_controls(&net.inner, &mut rng),
        }
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(json)
                .map_err(|e| PyValueError::new_err(format!("invalid controls: {e}")))?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.layers.len()
    }

    /// Row-major weight matrix of one layer.
    fn weights(&self, layer: usize) -> PyResult<Vec<Vec<f64>>> {
        let l = self.layer(layer)?;
        Ok((0..l.weights.nrows())
            .map(|i| l.weights.row(i).iter().copied().collect())
            .collect())
    }

    fn biases(&self, layer: usize) -> PyResult<Vec<f64>> {
        Ok(self.layer(layer)?.biases.iter().copied().collect())
    }

    fn sigma(&self, layer: usize) -> PyResult<Vec<f64>> {
        Ok(self.layer(layer)?.sigma.iter().copied().collect())
    }

    fn __repr__(&self) -> String {
        format!("Controls(depth={})", self.inner.layers.len())
    }
}

impl PyControls {
    fn layer(&self, layer: usize) -> PyResult<&dynamics::LayerControl> {
        self.inner
            .layers
            .get(layer)
            .ok_or_else(|| PyValueError::new_err(format!("layer {layer} out of range")))
    }
}

/// Single-sample SGD with the 1/sqrt(k) schedule.
///
/// Returns the trained controls and the training log as a list of dicts
/// with keys iteration, sample_index, loss, grad_norm, learning_rate.
#[pyfunction]
#[pyo3(signature = (dataset, net, init, iterations, seed, lr_scale=1.0,
                    scheme="right-point", freeze_sigma=false, log_every=1000))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    net: &PyNetConfig,
    init: &PyControls,
    iterations: usize,
    seed: u64,
    lr_scale: f64,
    scheme: &str,
    freeze_sigma: bool,
    log_every: usize,
) -> PyResult<(PyControls, Vec<Py<PyDict>>)> {
    let cfg = TrainConfig {
        iterations,
        lr_scale,
        seed,
        snapshot_every: 0,
        log_every,
        scheme: parse_scheme(scheme)?,
        freeze_sigma,
    };
    let (controls, log) =
        trainer::train(&dataset.inner, &net.inner, &cfg, init.inner.clone()).map_err(err)?;
    let records = log
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("iteration", r.iteration)?;
            d.set_item("sample_index", r.sample_index)?;
            d.set_item("loss", r.loss)?;
            d.set_item("grad_norm", r.grad_norm)?;
            d.set_item("learning_rate", r.learning_rate)?;
            Ok(d.unbind())
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyControls { inner: controls }, records))
}

/// One forward realization; returns the states X_0..X_N as lists.
#[pyfunction]
fn simulate(
    controls: &PyControls,
    net: &PyNetConfig,
    input: Vec<f64>,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let mut rng = StreamRng::new(seed);
    let path = dynamics::simulate_path(&input, &controls.inner, &net.inner, &mut rng).map_err(err)?;
    Ok(path
        .states
        .iter()
        .map(|x| x.iter().copied().collect())
        .collect())
}

/// Monte Carlo estimate of the expected cost over the dataset.
#[pyfunction]
#[pyo3(signature = (controls, dataset, net, m_paths, seed))]
fn evaluate_cost(
    controls: &PyControls,
    dataset: &PyDataset,
    net: &PyNetConfig,
    m_paths: usize,
    seed: u64,
) -> PyResult<f64> {
    trainer::evaluate_cost(&controls.inner, &dataset.inner, &net.inner, m_paths, seed).map_err(err)
}

/// Fully averaged gradient; one dict per layer with keys w, b, sigma.
#[pyfunction]
#[pyo3(signature = (controls, dataset, net, m_paths, seed, scheme="right-point"))]
fn mc_gradient(
    py: Python<'_>,
    controls: &PyControls,
    dataset: &PyDataset,
    net: &PyNetConfig,
    m_paths: usize,
    seed: u64,
    scheme: &str,
) -> PyResult<Vec<Py<PyDict>>> {
    let grad = trainer::mc_gradient(
        &controls.inner,
        &dataset.inner,
        &net.inner,
        parse_scheme(scheme)?,
        m_paths,
        seed,
    )
    .map_err(err)?;
    grad.layers
        .iter()
        .map(|l| {
            let d = PyDict::new(py);
            let w: Vec<Vec<f64>> = (0..l.grad_w.nrows())
                .map(|i| l.grad_w.row(i).iter().copied().collect())
                .collect();
            d.set_item("w", w)?;
            d.set_item("b", l.grad_b.iter().copied().collect::<Vec<_>>())?;
            d.set_item("sigma", l.grad_sigma.iter().copied().collect::<Vec<_>>())?;
            Ok(d.unbind())
        })
        .collect()
}

/// Empirical confidence band over a 1-d input grid; dict with keys
/// grid, mean, lower, upper, level.
#[pyfunction]
#[pyo3(signature = (controls, net, lo, hi, grid_points, samples, level, seed))]
#[allow(clippy::too_many_arguments)]
fn band_on_interval(
    py: Python<'_>,
    controls: &PyControls,
    net: &PyNetConfig,
    lo: f64,
    hi: f64,
    grid_points: usize,
    samples: usize,
    level: f64,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let band = eval::band_on_interval(
        &controls.inner,
        &net.inner,
        (lo, hi),
        grid_points,
        samples,
        level,
        seed,
    )
    .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("grid", band.grid)?;
    d.set_item("mean", band.mean)?;
    d.set_item("lower", band.lower)?;
    d.set_item("upper", band.upper)?;
    d.set_item("level", band.level)?;
    Ok(d.unbind())
}

/// Classification report on a circle-classification test set.
#[pyfunction]
#[pyo3(signature = (controls, net, testset, seed, votes=1, threshold=0.5))]
fn classification_metrics(
    py: Python<'_>,
    controls: &PyControls,
    net: &PyNetConfig,
    testset: &PyDataset,
    seed: u64,
    votes: usize,
    threshold: f64,
) -> PyResult<Py<PyDict>> {
    let m = eval::classification_metrics(
        &controls.inner,
        &net.inner,
        &testset.inner,
        votes,
        threshold,
        seed,
    )
    .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("accuracy_outside_band", m.accuracy_outside_band)?;
    d.set_item(
        "misclassified_inside_band_frac",
        m.misclassified_inside_band_frac,
    )?;
    d.set_item("majority_vote_accuracy", m.majority_vote_accuracy)?;
    d.set_item("test_points", m.test_points)?;
    Ok(d.unbind())
}

/// Pooled posterior-style estimate from `(x, v)` observations; dict with
/// keys point_estimate and pooled_samples.
#[pyfunction]
#[pyo3(signature = (controls, net, observations, samples_per_obs, seed))]
fn param_estimate(
    py: Python<'_>,
    controls: &PyControls,
    net: &PyNetConfig,
    observations: Vec<(f64, f64)>,
    samples_per_obs: usize,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let est = eval::param_estimate(
        &controls.inner,
        &net.inner,
        &observations,
        samples_per_obs,
        seed,
    )
    .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("point_estimate", est.point_estimate)?;
    d.set_item("pooled_samples", est.pooled_samples)?;
    Ok(d.unbind())
}

/// Finite-difference verification gate on a small instance; dict with keys
/// pass, pathwise, monte_carlo (each report has pass/tolerance/worst).
#[pyfunction]
#[pyo3(signature = (net, dataset, seed, m_paths=10000))]
fn gradient_check(
    py: Python<'_>,
    net: &PyNetConfig,
    dataset: &PyDataset,
    seed: u64,
    m_paths: usize,
) -> PyResult<Py<PyDict>> {
    let check = verify::gradient_check(&net.inner, &dataset.inner, seed, m_paths, false)
        .map_err(err)?;
    let report = |r: &verify::CheckReport| -> PyResult<Py<PyDict>> {
        let d = PyDict::new(py);
        d.set_item("pass", r.pass)?;
        d.set_item("tolerance", r.tolerance)?;
        d.set_item("worst", r.worst.clone())?;
        let max_err = r
            .errors
            .iter()
            .map(|e| e.max_scaled_err)
            .fold(0.0, f64::max);
        d.set_item("max_scaled_err", max_err)?;
        Ok(d.unbind())
    };
    let d = PyDict::new(py);
    d.set_item("pass", check.pass())?;
    d.set_item("pathwise", report(&check.pathwise)?)?;
    d.set_item("monte_carlo", report(&check.monte_carlo)?)?;
    Ok(d.unbind())
}

/// Exact pathwise gradient for a frozen noise sequence (one per layer).
#[pyfunction]
#[pyo3(signature = (controls, net, input, label, noises, scheme="left-point"))]
fn pathwise_gradient(
    py: Python<'_>,
    controls: &PyControls,
    net: &PyNetConfig,
    input: Vec<f64>,
    label: Vec<f64>,
    noises: Vec<Vec<f64>>,
    scheme: &str,
) -> PyResult<Vec<Py<PyDict>>> {
    use smp_snn::adjoint::{solve_adjoint, LossSpec};
    let x0 = dynamics::embed_input(&input, &net.inner).map_err(err)?;
    let noises: Vec<DVector<f64>> = noises
        .into_iter()
        .map(|v| DVector::from_vec(v))
        .collect();
    let path = verify::simulate_with_noises(&x0, &controls.inner, &noises, net.inner.step_size)
        .map_err(err)?;
    let gamma = DVector::from_row_slice(&label);
    let spec = LossSpec {
        label_dim: net.inner.label_dim,
    };
    let scheme = parse_scheme(scheme)?;
    let adjoint = solve_adjoint(
        &path,
        &controls.inner,
        &gamma,
        &spec,
        scheme,
        net.inner.step_size,
    )
    .map_err(err)?;
    let grad = trainer::pathwise_gradient(
        &trainer::TrajectoryBundle {
            state: path,
            adjoint,
        },
        &controls.inner,
        scheme,
        net.inner.step_size,
    )
    .map_err(err)?;
    grad.layers
        .iter()
        .map(|l| {
            let d = PyDict::new(py);
            let w: Vec<Vec<f64>> = (0..l.grad_w.nrows())
                .map(|i| l.grad_w.row(i).iter().copied().collect())
                .collect();
            d.set_item("w", w)?;
            d.set_item("b", l.grad_b.iter().copied().collect::<Vec<_>>())?;
            d.set_item("sigma", l.grad_sigma.iter().copied().collect::<Vec<_>>())?;
            Ok(d.unbind())
        })
        .collect()
}

#[pymodule]
fn smp_snn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyControls>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_cost, m)?)?;
    m.add_function(wrap_pyfunction!(mc_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(band_on_interval, m)?)?;
    m.add_function(wrap_pyfunction!(classification_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(param_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    m.add_function(wrap_pyfunction!(pathwise_gradient, m)?)?;
    Ok(())
}
