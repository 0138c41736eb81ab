//! Python bindings. Matrices cross the boundary as lists of rows, vectors
//! as flat lists; cycle and mode indices are one-based, as in files.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sascycle::benchmark;
use sascycle::control_sim::{check_robust_invariance_mc, ClosedLoop, ClosedLoopState};
use sascycle::io::{matrix_from_rows, matrix_to_rows, vector_from_slice, vector_to_vec, EllipsoidFile};
use sascycle::model::{Cycle, NominalSelection, SamplingStrategy};
use sascycle::nominal::{compute_limit_cycle, max_mu as core_max_mu, verify_nominal_certificate};
use sascycle::numerics::{self, Matrix, SymMatrix};
use sascycle::pipeline::{self, LoadedConfig};
use sascycle::robust::verify_robust_certificate;
use sascycle::Error;

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    matrix_from_rows(&rows).map_err(py_err)
}

fn nominal_from(a: Vec<Vec<Vec<f64>>>, b: Vec<Vec<f64>>, cycle: Vec<usize>) -> PyResult<(NominalSelection, Cycle)> {
    let a = a.into_iter().map(matrix).collect::<PyResult<Vec<_>>>()?;
    let b = b.iter().map(|v| vector_from_slice(v).map_err(py_err)).collect::<PyResult<Vec<_>>>()?;
    let nominal = NominalSelection::from_matrices(a, b).map_err(py_err)?;
    let cycle = Cycle::from_one_based(&cycle, nominal.num_modes()).map_err(py_err)?;
    Ok((nominal, cycle))
}

/// Largest eigenvalue modulus.
#[pyfunction]
fn spectral_radius(m: Vec<Vec<f64>>) -> PyResult<f64> {
    numerics::spectral_radius(&matrix(m)?).map_err(py_err)
}

/// Ascending eigenvalues of a symmetric matrix.
#[pyfunction]
fn sym_eigs(m: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let s = SymMatrix::new(matrix(m)?).map_err(py_err)?;
    Ok(numerics::sym_eigs(&s).eigenvalues)
}

/// `(exp(F T), ∫₀ᵀ exp(F s) g ds)`.
#[pyfunction]
#[pyo3(name = "expm_affine")]
fn py_expm_affine(f: Vec<Vec<f64>>, g: Vec<f64>, t: f64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let g = Matrix::from_column_slice(g.len(), 1, &g);
    let (ad, bd) = numerics::expm_affine(&matrix(f)?, &g, t).map_err(py_err)?;
    Ok((matrix_to_rows(&ad), bd.column(0).iter().copied().collect()))
}

/// Nominal limit cycle for modes `(A[j], B[j])` along a one-based cycle.
#[pyfunction]
fn limit_cycle(a: Vec<Vec<Vec<f64>>>, b: Vec<Vec<f64>>, cycle: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
    let (nominal, cycle) = nominal_from(a, b, cycle)?;
    let lc = compute_limit_cycle(&nominal, &cycle).map_err(py_err)?;
    Ok(lc.rho.iter().map(vector_to_vec).collect())
}

/// Largest admissible nominal decay rate.
#[pyfunction]
#[pyo3(signature = (a, b, cycle, tol = 1e-9))]
fn max_mu(a: Vec<Vec<Vec<f64>>>, b: Vec<Vec<f64>>, cycle: Vec<usize>, tol: f64) -> PyResult<f64> {
    let (nominal, cycle) = nominal_from(a, b, cycle)?;
    core_max_mu(&nominal, &cycle, tol).map_err(py_err)
}

/// Sampling period of the benchmark that best reproduces its reported
/// limit cycle: `(T, residual)`.
#[pyfunction]
#[pyo3(signature = (t_max = 2.0, grid_points = 2000))]
fn calibrate_sampling_period(t_max: f64, grid_points: usize) -> PyResult<(f64, f64)> {
    let c = benchmark::calibrate_sampling_period(t_max, grid_points).map_err(py_err)?;
    Ok((c.t, c.residual))
}

/// A certified closed loop produced by the configuration pipeline.
#[pyclass(name = "Design", module = "sascycle_py")]
struct PyDesign {
    inner: ClosedLoop,
    config: LoadedConfig,
    report: String,
}

fn state(cl: &ClosedLoop, x: Vec<f64>, z: Vec<f64>, theta: usize, vartheta: usize) -> PyResult<ClosedLoopState> {
    let np = cl.design.period();
    if theta == 0 || vartheta == 0 || theta > np || vartheta > np {
        return Err(PyValueError::new_err(format!("cycle indices are one-based and at most {np}")));
    }
    Ok(ClosedLoopState {
        x: vector_from_slice(&x).map_err(py_err)?,
        z: vector_from_slice(&z).map_err(py_err)?,
        theta: theta - 1,
        vartheta: vartheta - 1,
    })
}

#[pymethods]
impl PyDesign {
    /// Runs the certification pipeline on a JSON configuration text.
    #[staticmethod]
    #[pyo3(signature = (text, base_dir = None))]
    fn from_config(text: &str, base_dir: Option<PathBuf>) -> PyResult<Self> {
        let config = LoadedConfig::from_text(text, base_dir.unwrap_or_default()).map_err(py_err)?;
        Self::certify(config)
    }

    #[staticmethod]
    fn from_config_file(path: PathBuf) -> PyResult<Self> {
        let config = LoadedConfig::from_path(&path).map_err(py_err)?;
        Self::certify(config)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.design.dim()
    }

    #[getter]
    fn period(&self) -> usize {
        self.inner.design.period()
    }

    #[getter]
    fn cycle(&self) -> Vec<usize> {
        self.inner.design.cycle.one_based()
    }

    #[getter]
    fn rho(&self) -> Vec<Vec<f64>> {
        self.inner.design.limit_cycle.rho.iter().map(vector_to_vec).collect()
    }

    #[getter(P)]
    fn p(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.design.certificate.p.iter().map(|p| matrix_to_rows(p.as_matrix())).collect()
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.design.mu()
    }

    #[getter(R)]
    fn r(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.robust.r.as_matrix())
    }

    #[getter(Q)]
    fn q(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.robust.q.as_matrix())
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.robust.gamma
    }

    #[getter]
    fn margin(&self) -> f64 {
        self.inner.robust.margin
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.config.hash.clone()
    }

    /// Pipeline report as JSON text.
    #[getter]
    fn report(&self) -> String {
        self.report.clone()
    }

    /// Independent re-verification of both certificates.
    fn verify(&self) -> PyResult<bool> {
        let d = &self.inner.design;
        let nominal = verify_nominal_certificate(&d.certificate, &d.nominal, &d.cycle).map_err(py_err)?;
        let robust = verify_robust_certificate(d, &self.inner.robust).map_err(py_err)?;
        Ok(nominal.valid && robust.valid)
    }

    /// One-based min-switching choice for a prediction.
    fn control(&self, chi1: Vec<f64>) -> PyResult<usize> {
        if chi1.len() != self.dim() {
            return Err(PyValueError::new_err("prediction has the wrong length"));
        }
        Ok(self.inner.control(&vector_from_slice(&chi1).map_err(py_err)?) + 1)
    }

    fn lyapunov(&self, x: Vec<f64>, z: Vec<f64>, theta: usize, vartheta: usize) -> PyResult<f64> {
        let s = state(&self.inner, x, z, theta, vartheta)?;
        if s.x.len() != self.dim() || s.z.len() != self.dim() {
            return Err(PyValueError::new_err("state has the wrong length"));
        }
        Ok(self.inner.lyapunov(&s))
    }

    /// Closed-loop trace as a dict of columns.
    #[pyo3(signature = (x0, sigma0 = None, horizon = 1000, seed = 0, strategy = "vertex-random"))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        x0: Vec<f64>,
        sigma0: Option<usize>,
        horizon: usize,
        seed: u64,
        strategy: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let strategy: SamplingStrategy = strategy.parse().map_err(py_err)?;
        if sigma0 == Some(0) {
            return Err(PyValueError::new_err("sigma0 is one-based"));
        }
        let x0 = vector_from_slice(&x0).map_err(py_err)?;
        let trace = self
            .inner
            .simulate(&x0, sigma0.map(|s| s - 1), horizon, seed, strategy)
            .map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("x", trace.rows.iter().map(|r| vector_to_vec(&r.state.x)).collect::<Vec<_>>())?;
        out.set_item("theta", trace.rows.iter().map(|r| r.state.theta + 1).collect::<Vec<_>>())?;
        out.set_item("u", trace.rows.iter().map(|r| r.u + 1).collect::<Vec<_>>())?;
        out.set_item("V", trace.rows.iter().map(|r| r.v).collect::<Vec<_>>())?;
        out.set_item("V_next", trace.rows.iter().map(|r| r.v_next).collect::<Vec<_>>())?;
        out.set_item("argmin_ok", trace.rows.iter().map(|r| r.argmin_ok).collect::<Vec<_>>())?;
        out.set_item("in_attractor", trace.rows.iter().map(|r| r.in_attractor).collect::<Vec<_>>())?;
        out.set_item("first_entry", trace.first_entry())?;
        out.set_item("invariant_after_entry", trace.invariant_after_entry())?;
        out.set_item("sigma0", trace.sigma0 + 1)?;
        out.set_item("seed", trace.seed)?;
        Ok(out)
    }

    /// Attractor ellipsoids and pairwise disjointness as JSON text.
    #[pyo3(signature = (resolution = 48))]
    fn project(&self, resolution: usize) -> PyResult<String> {
        let file: EllipsoidFile =
            pipeline::project(&self.inner.design, &self.inner.robust, resolution, Some(self.config.hash.clone()))
                .map_err(py_err)?;
        serde_json::to_string(&file).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Sampled one-step invariance check: `(passed, max V⁺, accepted samples)`.
    #[pyo3(signature = (samples = 10000, seed = 0))]
    fn invariance_mc(&self, samples: usize, seed: u64) -> PyResult<(bool, f64, usize)> {
        let tol = self.config.config.tolerances.invariance;
        let r = check_robust_invariance_mc(&self.inner, samples, seed, tol).map_err(py_err)?;
        Ok((r.pass, r.max_v_next, r.accepted))
    }

    fn __repr__(&self) -> String {
        format!(
            "Design(n={}, cycle={:?}, mu={}, gamma={}, margin={:.3e})",
            self.dim(),
            self.cycle(),
            self.mu(),
            self.gamma(),
            self.margin()
        )
    }
}

impl PyDesign {
    fn certify(config: LoadedConfig) -> PyResult<Self> {
        let c = pipeline::certify(&config);
        let report = serde_json::to_string(&c.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let (design, robust) = c.into_result().map_err(py_err)?;
        let inner = ClosedLoop::new(design, robust).map_err(py_err)?;
        Ok(Self { inner, config, report })
    }
}

#[pymodule]
fn sascycle_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(spectral_radius, m)?)?;
    m.add_function(wrap_pyfunction!(sym_eigs, m)?)?;
    m.add_function(wrap_pyfunction!(py_expm_affine, m)?)?;
    m.add_function(wrap_pyfunction!(limit_cycle, m)?)?;
    m.add_function(wrap_pyfunction!(max_mu, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_sampling_period, m)?)?;
    m.add_class::<PyDesign>()?;
    Ok(())
}
