//! Python bindings: kernels, GP regression, cross-validation, simulation,
//! state estimation, drift/diffusion recovery and metrics.

use gridsde::experiments::{self, ExperimentConfig, TABLE_STATES};
use gridsde::kernels::{self, KernelSpec};
use gridsde::sde::{euler_maruyama, ornstein_uhlenbeck, uniform_grid};
use gridsde::{gp, metrics, Error, GpPosterior};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// Inputs given as a flat list (1-D points) or as a list of rows.
#[derive(FromPyObject)]
enum Points {
    Flat(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

impl Points {
    fn matrix(&self) -> PyResult<DMatrix<f64>> {
        match self {
            Points::Flat(v) => Ok(kernels::points_1d(v)),
            Points::Rows(rows) => {
                let d = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != d) {
                    return Err(PyValueError::new_err("rows have different lengths"));
                }
                Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
            }
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn load_config(config: Option<&str>, seed: Option<u64>) -> PyResult<ExperimentConfig> {
    let cfg = match config {
        Some(text) => ExperimentConfig::from_json_str(text).map_err(to_py)?,
        None => ExperimentConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

#[pyclass(name = "Kernel", module = "gridsde_py", frozen, from_py_object)]
#[derive(Clone)]
struct Kernel {
    spec: KernelSpec,
}

#[pymethods]
impl Kernel {
    #[staticmethod]
    fn rbf(length_scale: f64) -> PyResult<Self> {
        Ok(Kernel {
            spec: KernelSpec::rbf(length_scale).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (length_scale, nu = 1.5))]
    fn matern(length_scale: f64, nu: f64) -> PyResult<Self> {
        Ok(Kernel {
            spec: KernelSpec::matern(length_scale, nu).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn rational_quadratic(length_scale: f64, alpha: f64) -> PyResult<Self> {
        Ok(Kernel {
            spec: KernelSpec::rational_quadratic(length_scale, alpha).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn periodic(length_scale: f64, period: f64) -> PyResult<Self> {
        Ok(Kernel {
            spec: KernelSpec::periodic(length_scale, period).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn ensemble(members: Vec<Kernel>) -> PyResult<Self> {
        let members = members.into_iter().map(|k| k.spec).collect();
        Ok(Kernel {
            spec: KernelSpec::ensemble(members).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn rbf_plus_periodic(rbf_length: f64, periodic_length: f64, period: f64) -> PyResult<Self> {
        Ok(Kernel {
            spec: KernelSpec::rbf_plus_periodic(rbf_length, periodic_length, period)
                .map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: KernelSpec = serde_json::from_str(text).map_err(|e| to_py(e.into()))?;
        spec.validate().map_err(to_py)?;
        Ok(Kernel { spec })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.spec).map_err(|e| to_py(e.into()))
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.spec.family()
    }

    /// k(x, x); 1 for the base kernels, the member count for an ensemble.
    #[getter]
    fn diagonal(&self) -> f64 {
        self.spec.diagonal()
    }

    fn __call__(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        kernels::eval(&self.spec, &x, &y).map_err(to_py)
    }

    #[pyo3(signature = (x, y = None))]
    fn gram(&self, x: Points, y: Option<Points>) -> PyResult<Vec<Vec<f64>>> {
        let x = x.matrix()?;
        let k = match y {
            Some(y) => kernels::gram(&self.spec, &x, &y.matrix()?),
            None => kernels::gram_symmetric(&self.spec, &x),
        };
        Ok(rows(&k.map_err(to_py)?))
    }

    fn __eq__(&self, other: &Kernel) -> bool {
        self.spec == other.spec
    }

    fn __repr__(&self) -> String {
        format!("Kernel({:?})", self.spec)
    }
}

/// Zero-mean GP posterior with noise variance `noise`.
#[pyclass(name = "GaussianProcess", module = "gridsde_py", frozen)]
struct GaussianProcess {
    post: GpPosterior,
}

#[pymethods]
impl GaussianProcess {
    #[new]
    #[pyo3(signature = (kernel, x, y, noise = 1e-10))]
    fn new(kernel: &Kernel, x: Points, y: Vec<f64>, noise: f64) -> PyResult<Self> {
        let post = gp::fit(&kernel.spec, &x.matrix()?, &y, noise).map_err(to_py)?;
        Ok(GaussianProcess { post })
    }

    fn predict_mean(&self, x: Points) -> PyResult<Vec<f64>> {
        Ok(self
            .post
            .predict_mean(&x.matrix()?)
            .map_err(to_py)?
            .as_slice()
            .to_vec())
    }

    fn predict_var(&self, x: Points) -> PyResult<Vec<f64>> {
        Ok(self
            .post
            .predict_var(&x.matrix()?)
            .map_err(to_py)?
            .as_slice()
            .to_vec())
    }

    #[getter]
    fn kernel(&self) -> Kernel {
        Kernel {
            spec: self.post.kernel().clone(),
        }
    }

    #[getter]
    fn noise(&self) -> f64 {
        self.post.noise()
    }

    /// Diagonal jitter the factorization needed on top of `noise`.
    #[getter]
    fn jitter(&self) -> f64 {
        self.post.jitter()
    }
}

/// k-fold CV over `candidates`; returns the chosen index, the mean fold
/// errors and the chosen kernel.
#[pyfunction]
#[pyo3(signature = (candidates, x, y, folds = 5, seed = 0, noise = 1e-10))]
fn cross_validate<'py>(
    py: Python<'py>,
    candidates: Vec<Kernel>,
    x: Points,
    y: Vec<f64>,
    folds: usize,
    seed: u64,
    noise: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let specs: Vec<KernelSpec> = candidates.into_iter().map(|k| k.spec).collect();
    let report = gp::cross_validate(&specs, &x.matrix()?, &y, folds, seed, noise).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("chosen", report.chosen)?;
    d.set_item("fold_errors", report.fold_errors.clone())?;
    d.set_item(
        "kernel",
        Kernel {
            spec: report.chosen_kernel().clone(),
        },
    )?;
    Ok(d)
}

#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    y_true: Vec<f64>,
    y_pred: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let m = metrics::evaluate(&y_true, &y_pred).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mse", m.mse)?;
    d.set_item("mae", m.mae)?;
    d.set_item("r2", m.r2)?;
    Ok(d)
}

/// Euler–Maruyama path of `dX = −θX dt + σ dW`.
#[pyfunction]
#[pyo3(signature = (theta, sigma, x0, dt, steps, seed = 0))]
fn ou_path(
    theta: f64,
    sigma: f64,
    x0: f64,
    dt: f64,
    steps: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let grid = uniform_grid(0.0, dt, steps + 1);
    let traj =
        euler_maruyama(&ornstein_uhlenbeck(theta, sigma), &[x0], &grid, seed).map_err(to_py)?;
    Ok((traj.times.clone(), traj.column(0)))
}

/// Grid trajectory for a JSON config (defaults when omitted).
#[pyfunction]
#[pyo3(signature = (config = None, seed = None))]
fn simulate<'py>(
    py: Python<'py>,
    config: Option<&str>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = load_config(config, seed)?;
    let traj = experiments::run_simulation(&cfg).map_err(to_py)?.trajectory;
    let d = PyDict::new(py);
    d.set_item("times", traj.times.clone())?;
    for (j, label) in traj.labels.iter().enumerate() {
        d.set_item(label, traj.column(j))?;
    }
    Ok(d)
}

/// One dict per kernel family with MSE, MAE and R² for ω and δ. A failed
/// family carries its error under "error".
#[pyfunction]
#[pyo3(signature = (config = None, seed = None))]
fn estimate<'py>(
    py: Python<'py>,
    config: Option<&str>,
    seed: Option<u64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = load_config(config, seed)?;
    let out = experiments::run_state_estimation(&cfg).map_err(to_py)?;
    let mut table = Vec::new();
    for row in &out.rows {
        let d = PyDict::new(py);
        d.set_item("kernel", row.family.display_name())?;
        for state in TABLE_STATES {
            if let Some(m) = row.metrics(state) {
                d.set_item(format!("mse_{state}"), m.mse)?;
                d.set_item(format!("mae_{state}"), m.mae)?;
                d.set_item(format!("r2_{state}"), m.r2)?;
            }
        }
        if let Some((_, Err(msg))) = row.states.iter().find(|(_, r)| r.is_err()) {
            d.set_item("error", msg)?;
        }
        table.push(d);
    }
    Ok(table)
}

/// Drift/diffusion recovery summary as a dict.
#[pyfunction]
#[pyo3(signature = (config = None, seed = None))]
fn recover<'py>(
    py: Python<'py>,
    config: Option<&str>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = load_config(config, seed)?;
    let out = experiments::run_sde_recovery(&cfg).map_err(to_py)?;
    let text = serde_json::to_string(&out.summary).map_err(|e| to_py(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pymodule]
fn gridsde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Kernel>()?;
    m.add_class::<GaussianProcess>()?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(ou_path, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(recover, m)?)?;
    Ok(())
}
