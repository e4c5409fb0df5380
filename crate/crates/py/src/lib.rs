//! Python bindings. Structured results come back as plain dicts and lists
//! (through their JSON form); multipliers and exponents as `complex`.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyComplex;

use cns_floquet::cli_io::{self, Context};
use cns_floquet::config_params::{Params, PressureLaw, RunConfig};
use cns_floquet::dispersion::stokes_cell;
use cns_floquet::floquet_engine::rest_exponents_dense;
use cns_floquet::{c64, cell_grid::CellGrid};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn complex_list(py: Python<'_>, v: &[c64]) -> Vec<Py<PyComplex>> {
    v.iter().map(|z| PyComplex::from_doubles(py, z.re, z.im).unbind()).collect()
}

/// Run configuration (TOML-backed).
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// Desk setup with the force at `fraction` of the regime threshold.
    #[staticmethod]
    #[pyo3(signature = (fraction = 0.5))]
    fn desk(fraction: f64) -> Self {
        Self { inner: RunConfig::desk(fraction) }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        RunConfig::from_toml(text).map(|inner| Self { inner }).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, s: u64) {
        self.inner.seed = s;
    }

    /// Resolved non-dimensional parameters.
    fn params(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.params().map_err(err)?)
    }

    fn config_hash(&self) -> String {
        cli_io::config_hash(&self.inner)
    }
}

/// A pipeline run writing its artifacts under `out`.
#[pyclass(name = "Study")]
struct PyStudy {
    ctx: Context,
}

fn stage<T>(r: Result<T, cli_io::StageFailure>) -> PyResult<T> {
    r.map_err(|f| PyRuntimeError::new_err(format!("stage `{}` failed: {}", f.stage, f.message)))
}

#[pymethods]
impl PyStudy {
    #[new]
    fn new(config: &PyConfig, out: PathBuf) -> PyResult<Self> {
        Ok(Self {
            ctx: Context::new(config.inner.clone(), &out).map_err(err)?,
        })
    }

    fn state(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let s = stage(self.ctx.state())?;
        to_py(py, &s)
    }

    /// Leading multipliers for each Bloch parameter (default `η = 0`).
    #[pyo3(signature = (etas = None))]
    fn multipliers(&mut self, py: Python<'_>, etas: Option<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<Py<PyComplex>>>> {
        let d = self.ctx.grid.dim_n() - 1;
        let etas = etas.unwrap_or_else(|| vec![vec![0.0; d]]);
        let s = stage(self.ctx.floquet(&etas, false))?;
        Ok(s.spectra.iter().map(|sp| complex_list(py, &sp.multipliers)).collect())
    }

    #[pyo3(signature = (etas = None))]
    fn floquet(&mut self, py: Python<'_>, etas: Option<Vec<Vec<f64>>>) -> PyResult<Py<PyAny>> {
        let d = self.ctx.grid.dim_n() - 1;
        let etas = etas.unwrap_or_else(|| vec![vec![0.0; d]]);
        let s = stage(self.ctx.floquet(&etas, false))?;
        to_py(py, &s)
    }

    fn coeffs(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let c = stage(self.ctx.coeffs())?;
        to_py(py, &c)
    }

    #[pyo3(signature = (etas = None))]
    fn dispersion(&mut self, py: Python<'_>, etas: Option<Vec<Vec<f64>>>) -> PyResult<Py<PyAny>> {
        let s = stage(self.ctx.dispersion(etas))?;
        to_py(py, &s)
    }

    fn write_manifest(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        self.ctx.write_manifest("complete").map_err(err)?;
        to_py(py, &self.ctx.manifest)
    }
}

/// Runs the whole pipeline; returns `(manifest, verify_report)`.
#[pyfunction]
#[pyo3(signature = (config, out, etas = None))]
fn run_pipeline(py: Python<'_>, config: &PyConfig, out: PathBuf, etas: Option<Vec<Vec<f64>>>) -> PyResult<(Py<PyAny>, Py<PyAny>)> {
    let (m, r) = cli_io::run_pipeline(config.inner.clone(), &out, etas).map_err(err)?;
    Ok((to_py(py, &m)?, to_py(py, &r)?))
}

#[pyfunction]
fn verify(py: Python<'_>, out: PathBuf) -> PyResult<Py<PyAny>> {
    to_py(py, &cli_io::verify(&out).map_err(err)?)
}

fn desk_grid(nu: f64, nu_tilde: f64, gamma: f64, alpha: f64, nh: usize, nz: usize) -> PyResult<(Params, CellGrid)> {
    let p = Params::new(nu, nu_tilde, gamma, 0.0, 1.0, 2, vec![alpha], PressureLaw::Isothermal)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let g = CellGrid::new(2, &[nh], nz, &[alpha]).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((p, g))
}

/// Stokes-cell constant for a 2D channel: `(ã from the mean, ã from gradients, κ̂₀)`.
#[pyfunction]
#[pyo3(signature = (nu, nu_tilde, gamma, alpha = 0.2, nh = 5, nz = 17))]
fn stokes_constant(nu: f64, nu_tilde: f64, gamma: f64, alpha: f64, nh: usize, nz: usize) -> PyResult<(f64, f64, f64)> {
    let (p, g) = desk_grid(nu, nu_tilde, gamma, alpha, nh, nz)?;
    let s = stokes_cell(&g, &p).map_err(err)?;
    Ok((s.a_tilde_mean[0][0], s.a_tilde_grad[0][0], s.kappa0))
}

/// Eigenvalues of the rest-state operator `L_η` (2D), slowest first.
#[pyfunction]
#[pyo3(signature = (eta, nu = 10.0, nu_tilde = 10.0, gamma = 40.0, alpha = 0.2, nh = 9, nz = 13))]
fn rest_exponents(py: Python<'_>, eta: f64, nu: f64, nu_tilde: f64, gamma: f64, alpha: f64, nh: usize, nz: usize) -> PyResult<Vec<Py<PyComplex>>> {
    let (p, g) = desk_grid(nu, nu_tilde, gamma, alpha, nh, nz)?;
    let ev = rest_exponents_dense(&g, &p, &[eta]).map_err(err)?;
    Ok(complex_list(py, &ev))
}

#[pymodule]
#[pyo3(name = "cns_floquet")]
fn cns_floquet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyStudy>()?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(stokes_constant, m)?)?;
    m.add_function(wrap_pyfunction!(rest_exponents, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
