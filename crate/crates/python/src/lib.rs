//! Python bindings. Vectors and matrices cross the boundary as (nested)
//! lists of floats; matrices are row-major.

use ::koopman_em as core;
use core::em::{init_random_scaled, input_bounds, select_model, SelectConfig};
use core::io::{
    dataset_from_json, dataset_to_json, matrix_to_rows, model_from_json, model_to_json,
    read_dataset, read_model, rows_to_matrix, write_dataset, write_model,
};
use core::mpc::{OcpSpec, SolverConfig};
use core::{Dataset, Error, FitConfig, ModelParams, Trajectory};
use nalgebra::DVector;
use num_complex::Complex64;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

type Rows = Vec<Vec<f64>>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Numerical(_)
        | Error::SingularModel(_)
        | Error::Identifiability(_)
        | Error::NoConvergedRun(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn vecs(rows: &[Vec<f64>]) -> Vec<DVector<f64>> {
    rows.iter().map(|r| DVector::from_column_slice(r)).collect()
}

fn rows(vs: &[DVector<f64>]) -> Rows {
    vs.iter().map(|v| v.iter().copied().collect()).collect()
}

/// Bilinear latent model with Gaussian noise.
#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: ModelParams,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: model_from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        model_to_json(&self.inner).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: read_model(path.as_ref()).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_model(path.as_ref(), &self.inner).map_err(py_err)
    }

    /// Exact lifted model of the slow-manifold system.
    #[staticmethod]
    #[pyo3(signature = (alpha=1.0, beta=5.0, dt=0.01, noise_var=0.01))]
    fn slow_manifold(alpha: f64, beta: f64, dt: f64, noise_var: f64) -> Self {
        PyModel {
            inner: core::systems::slow_manifold_params(alpha, beta, dt, noise_var),
        }
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn q(&self) -> usize {
        self.inner.q
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p
    }

    /// Generator matrices `Ṽ_0..Ṽ_q`, each `(n+1) × n`.
    #[getter]
    fn generators(&self) -> Vec<Rows> {
        self.inner.gen.iter().map(matrix_to_rows).collect()
    }

    #[getter]
    fn sigma_w(&self) -> Rows {
        matrix_to_rows(&self.inner.sigma_w)
    }

    #[getter]
    fn sigma_v(&self) -> Rows {
        matrix_to_rows(&self.inner.sigma_v)
    }

    /// `(A, b)` of one step under input `u`.
    fn step_matrix(&self, u: Vec<f64>) -> PyResult<(Rows, Vec<f64>)> {
        let sm = core::step_matrix(&self.inner, &DVector::from_vec(u)).map_err(py_err)?;
        Ok((matrix_to_rows(&sm.a), sm.b.iter().copied().collect()))
    }

    /// Eigenvalues of the generator at constant input `u` (drift if omitted).
    #[pyo3(signature = (u=None))]
    fn spectrum(&self, u: Option<Vec<f64>>) -> PyResult<Vec<Complex64>> {
        let u = DVector::from_vec(u.unwrap_or_else(|| vec![0.0; self.inner.q]));
        let pairs = core::eigen_spectrum(&self.inner, &u).map_err(py_err)?;
        Ok(pairs.iter().map(|e| e.lam).collect())
    }

    /// Returns `(states, outputs)`; noise is drawn only when `seed` is given.
    #[pyo3(signature = (z0, inputs, seed=None))]
    fn simulate(&self, z0: Vec<f64>, inputs: Rows, seed: Option<u64>) -> PyResult<(Rows, Rows)> {
        let sim = core::simulate(&self.inner, &DVector::from_vec(z0), &vecs(&inputs), seed)
            .map_err(py_err)?;
        Ok((rows(&sim.states), rows(&sim.trajectory.outputs)))
    }

    /// Smoothed means, covariances and the log-likelihood of one trajectory.
    fn smooth(&self, inputs: Rows, outputs: Rows) -> PyResult<(Rows, Vec<Rows>, f64)> {
        let traj = Trajectory {
            inputs: vecs(&inputs),
            outputs: vecs(&outputs),
        };
        let (post, ll) = core::smooth(&self.inner, &traj).map_err(py_err)?;
        Ok((
            rows(&post.mu),
            post.sig.iter().map(matrix_to_rows).collect(),
            ll,
        ))
    }

    /// Output mean and standard deviation after filtering on `warmup` samples.
    fn forecast(&self, inputs: Rows, outputs: Rows, warmup: usize) -> PyResult<(Rows, Rows)> {
        let traj = Trajectory {
            inputs: vecs(&inputs),
            outputs: vecs(&outputs),
        };
        let f = core::forecast(&self.inner, &traj, warmup).map_err(py_err)?;
        Ok((rows(&f.mean), rows(&f.std)))
    }

    fn log_likelihood(&self, dataset: &PyDataset) -> PyResult<f64> {
        core::em::log_likelihood(&dataset.inner, &self.inner).map_err(py_err)
    }

    /// Optimal inputs over `n_p` steps from latent state `z0`; returns
    /// `(inputs, cost)`.
    #[pyo3(signature = (z0, y_ref, q_weight, r_weight, u_min, u_max))]
    fn solve_ocp(
        &self,
        z0: Vec<f64>,
        y_ref: Rows,
        q_weight: Rows,
        r_weight: Rows,
        u_min: Vec<f64>,
        u_max: Vec<f64>,
    ) -> PyResult<(Rows, f64)> {
        let (p, q) = (self.inner.p, self.inner.q);
        let n_p = y_ref.len().saturating_sub(1);
        let spec = OcpSpec {
            q_weight: rows_to_matrix(&q_weight, p, p, "q_weight").map_err(py_err)?,
            r_weight: rows_to_matrix(&r_weight, q, q, "r_weight").map_err(py_err)?,
            n_p,
            n_c: n_p.max(1),
            u_min: DVector::from_vec(u_min),
            u_max: DVector::from_vec(u_max),
            y_ref: vecs(&y_ref),
        };
        let sol = core::solve_ocp(
            &self.inner,
            &DVector::from_vec(z0),
            &spec,
            None,
            &SolverConfig::default(),
        )
        .map_err(py_err)?;
        Ok((rows(&sol.inputs), sol.cost))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(n={}, q={}, p={}, dt={})",
            self.inner.n, self.inner.q, self.inner.p, self.inner.dt
        )
    }
}

/// Collection of input/output trajectories.
#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// `trajectories` is a list of `(inputs, outputs)` pairs.
    #[new]
    fn new(dt: f64, p: usize, q: usize, trajectories: Vec<(Rows, Rows)>) -> PyResult<Self> {
        let d = Dataset {
            dt,
            p,
            q,
            trajectories: trajectories
                .iter()
                .map(|(u, y)| Trajectory {
                    inputs: vecs(u),
                    outputs: vecs(y),
                })
                .collect(),
        };
        d.validate().map_err(py_err)?;
        Ok(PyDataset { inner: d })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: dataset_from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        dataset_to_json(&self.inner).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: read_dataset(path.as_ref()).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_dataset(path.as_ref(), &self.inner).map_err(py_err)
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p
    }

    #[getter]
    fn q(&self) -> usize {
        self.inner.q
    }

    fn __len__(&self) -> usize {
        self.inner.trajectories.len()
    }

    /// `(inputs, outputs)` of trajectory `i`.
    fn trajectory(&self, i: usize) -> PyResult<(Rows, Rows)> {
        let t = self
            .inner
            .trajectories
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("trajectory {i} out of range")))?;
        Ok((rows(&t.inputs), rows(&t.outputs)))
    }
}

/// Result of an EM run.
#[pyclass(name = "FitResult", get_all)]
struct PyFitResult {
    model: PyModel,
    loglik_trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Random initialization with time scale `tau` (defaults to `dt`).
#[pyfunction]
#[pyo3(signature = (dataset, n, seed=0, tau=None))]
fn init_random(dataset: &PyDataset, n: usize, seed: u64, tau: Option<f64>) -> PyResult<PyModel> {
    let d = &dataset.inner;
    let inner = init_random_scaled(
        n,
        d.q,
        d.p,
        d.dt,
        &input_bounds(d),
        seed,
        tau.unwrap_or(d.dt),
    )
    .map_err(py_err)?;
    Ok(PyModel { inner })
}

/// Runs EM from `init`.
#[pyfunction]
#[pyo3(signature = (dataset, init, max_iters=500, rel_tol=1e-7))]
fn fit(
    py: Python<'_>,
    dataset: &PyDataset,
    init: &PyModel,
    max_iters: usize,
    rel_tol: f64,
) -> PyResult<PyFitResult> {
    let config = FitConfig { max_iters, rel_tol };
    let res = py
        .detach(|| core::fit(&dataset.inner, &init.inner, &config))
        .map_err(py_err)?;
    Ok(PyFitResult {
        model: PyModel { inner: res.params },
        loglik_trace: res.loglik_trace,
        converged: res.converged,
        iterations: res.iterations,
    })
}

/// Best converged run over latent dimensions and restarts, plus the table
/// of `(dim, seed, final_loglik, converged)` rows.
#[pyfunction]
#[pyo3(signature = (dataset, dims, restarts, max_iters=500, rel_tol=1e-7, seed=0, tau=None))]
#[allow(clippy::too_many_arguments)]
fn select(
    py: Python<'_>,
    dataset: &PyDataset,
    dims: Vec<usize>,
    restarts: usize,
    max_iters: usize,
    rel_tol: f64,
    seed: u64,
    tau: Option<f64>,
) -> PyResult<(PyFitResult, Vec<RunRow>)> {
    let config = SelectConfig {
        fit: FitConfig { max_iters, rel_tol },
        base_seed: seed,
        init_time_scale: tau,
    };
    let (best, table) = py
        .detach(|| select_model(&dataset.inner, &dims, restarts, &config))
        .map_err(|(e, _)| py_err(e))?;
    let table = table
        .iter()
        .map(|r| (r.dim, r.seed, r.final_loglik, r.converged))
        .collect();
    Ok((
        PyFitResult {
            model: PyModel { inner: best.params },
            loglik_trace: best.loglik_trace,
            converged: best.converged,
            iterations: best.iterations,
        },
        table,
    ))
}

/// `(dim, seed, final_loglik, converged)` per selection run.
type RunRow = (usize, u64, f64, bool);

/// Generator EDMD model on a tensor Legendre dictionary of the outputs.
#[pyfunction]
fn init_edmd(
    dataset: &PyDataset,
    degrees: Vec<usize>,
    domain: Vec<(f64, f64)>,
) -> PyResult<PyModel> {
    let dict = core::legendre_dictionary(&domain, &degrees).map_err(py_err)?;
    Ok(PyModel {
        inner: core::init_from_edmd(&dataset.inner, &dict).map_err(py_err)?,
    })
}

/// `(train, test, warmup)` of the slow-manifold benchmark.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn slow_manifold_data(seed: u64) -> PyResult<(PyDataset, PyDataset, usize)> {
    let d = core::systems::dataset_protocol_slow_manifold(seed).map_err(py_err)?;
    Ok((
        PyDataset { inner: d.train },
        PyDataset { inner: d.test },
        d.warmup,
    ))
}

/// `(train, test, warmup)` of the Duffing benchmark.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn duffing_data(seed: u64) -> PyResult<(PyDataset, PyDataset, usize)> {
    let d = core::systems::dataset_protocol_duffing(seed).map_err(py_err)?;
    Ok((
        PyDataset { inner: d.train },
        PyDataset { inner: d.test },
        d.warmup,
    ))
}

#[pymodule]
fn koopman_em(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(init_random, m)?)?;
    m.add_function(wrap_pyfunction!(init_edmd, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(slow_manifold_data, m)?)?;
    m.add_function(wrap_pyfunction!(duffing_data, m)?)?;
    Ok(())
}
