//! Python bindings. Structured results cross the boundary as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use almgren_core::angular_spectrum::{
    build_potential, closed_form_ab_spectrum, compute_spectrum, AngularPotential, AngularSpectrum,
    PotentialSpec,
};
use almgren_core::inequalities::hardy_2d_constant_check;
use almgren_core::modal_field;
use almgren_core::scenario::{self, CheckName, RunOptions};
use almgren_core::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_)
        | Error::Validation(_)
        | Error::Unsupported(_)
        | Error::InvalidCoefficients(_)
        | Error::IndexOutOfRange { .. }
        | Error::RadiusOutOfRange { .. }
        | Error::IndefiniteForm { .. }
        | Error::Json { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_dict<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

/// Validated scenario description.
#[pyclass(name = "Scenario", module = "almgren", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: scenario::Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let sc = scenario::Scenario::from_json(text).map_err(to_py_err)?;
        sc.normalized().map_err(to_py_err)?;
        Ok(Self { inner: sc })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: scenario::parse_scenario(&path).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension
    }

    #[getter]
    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("scenario serializes")
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, dimension={})",
            self.inner.name.as_deref().unwrap_or(""),
            self.inner.dimension
        )
    }
}

/// Angular potential `(A, a)` on the unit sphere.
#[pyclass(name = "Potential", module = "almgren", frozen)]
struct PyPotential {
    inner: AngularPotential,
}

#[pymethods]
impl PyPotential {
    #[staticmethod]
    #[pyo3(signature = (alpha, a0 = 0.0))]
    fn aharonov_bohm(alpha: f64, a0: f64) -> PyResult<Self> {
        Self::build(2, &PotentialSpec::AharonovBohm { alpha, a0 })
    }

    #[staticmethod]
    #[pyo3(signature = (strength, axis = [0.0, 0.0, 1.0]))]
    fn dipole(strength: f64, axis: [f64; 3]) -> PyResult<Self> {
        Self::build(3, &PotentialSpec::Dipole { lambda: strength, axis })
    }

    #[staticmethod]
    fn zero(dimension: usize) -> PyResult<Self> {
        Self::build(dimension, &PotentialSpec::zero())
    }

    /// From the JSON object used under `"potential"` in scenario files.
    #[staticmethod]
    fn from_json(dimension: usize, text: &str) -> PyResult<Self> {
        let spec: PotentialSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Self::build(dimension, &spec)
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension
    }

    /// Circulation `Φ_A` (two dimensions only).
    fn circulation(&self) -> PyResult<f64> {
        almgren_core::angular_spectrum::circulation(&self.inner).map_err(to_py_err)
    }

    #[pyo3(signature = (count = 8, truncation = None))]
    fn spectrum(&self, count: usize, truncation: Option<usize>) -> PyResult<PySpectrum> {
        let t = truncation.unwrap_or_else(|| almgren_core::angular_spectrum::default_truncation(self.inner.dimension));
        Ok(PySpectrum {
            inner: compute_spectrum(&self.inner, t, count).map_err(to_py_err)?,
        })
    }

    /// `μ1` against the closed-form 2-D Hardy constant `dist(Φ_A, Z)²`.
    #[pyo3(signature = (truncation = 64))]
    fn hardy_2d(&self, py: Python<'_>, truncation: usize) -> PyResult<Py<PyAny>> {
        to_dict(py, &hardy_2d_constant_check(&self.inner, truncation).map_err(to_py_err)?)
    }
}

impl PyPotential {
    fn build(dimension: usize, spec: &PotentialSpec) -> PyResult<Self> {
        Ok(Self {
            inner: build_potential(dimension, spec).map_err(to_py_err)?,
        })
    }
}

/// Sorted angular eigenvalues with multiplicity blocks.
#[pyclass(name = "Spectrum", module = "almgren", frozen)]
struct PySpectrum {
    inner: AngularSpectrum,
}

#[pymethods]
impl PySpectrum {
    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues.clone()
    }

    /// `(j0, m)` pairs, 1-based.
    #[getter]
    fn blocks(&self) -> Vec<(usize, usize)> {
        self.inner.blocks.clone()
    }

    #[getter]
    fn mu1(&self) -> f64 {
        self.inner.eigenvalues[0]
    }

    /// `(σ⁺, σ⁻)` of the 1-based mode `k`.
    fn exponents(&self, k: usize) -> PyResult<(f64, f64)> {
        let mu = *self
            .inner
            .eigenvalues
            .get(k.wrapping_sub(1))
            .ok_or_else(|| PyValueError::new_err(format!("mode index {k} outside 1..={}", self.inner.len())))?;
        characteristic_exponents(self.inner.dimension(), mu)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Staged pipeline over one scenario.
#[pyclass(name = "Pipeline", module = "almgren")]
struct PyPipeline {
    inner: scenario::Pipeline,
}

#[pymethods]
impl PyPipeline {
    #[new]
    fn new(scenario: &PyScenario) -> PyResult<Self> {
        Ok(Self {
            inner: scenario::Pipeline::new(&scenario.inner).map_err(to_py_err)?,
        })
    }

    fn spectrum(&self) -> PySpectrum {
        PySpectrum {
            inner: self.inner.spectrum.clone(),
        }
    }

    fn solve(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        self.inner.solve().map_err(to_py_err)?;
        to_dict(py, &self.inner.solution.as_ref().expect("solved").summary())
    }

    /// Trace `{radii, height, dirichlet, frequency, fit, ...}`.
    fn frequency(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let t = self.inner.frequency().map_err(to_py_err)?;
        to_dict(py, t)
    }

    /// Leading block and coefficients at `radius`; `gamma` defaults to the
    /// fitted exponent.
    #[pyo3(signature = (gamma = None, radius = None))]
    fn profile(&mut self, py: Python<'_>, gamma: Option<f64>, radius: Option<f64>) -> PyResult<Py<PyAny>> {
        let g = match gamma {
            Some(g) => g,
            None => self.inner.frequency().map_err(to_py_err)?.fit.gamma_hat,
        };
        let r = radius.unwrap_or(self.inner.scenario.boundary.radius);
        to_dict(py, &self.inner.profile_at(g, r).map_err(to_py_err)?.to_json())
    }

    fn kelvin(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_dict(py, &self.inner.kelvin().map_err(to_py_err)?)
    }
}

fn options(tol_scale: f64, seed: Option<u64>, out_dir: Option<PathBuf>) -> PyResult<RunOptions> {
    if !(tol_scale > 0.0 && tol_scale.is_finite()) {
        return Err(PyValueError::new_err("tol_scale must be a positive number"));
    }
    Ok(RunOptions {
        tol_scale,
        seed,
        out_dir,
    })
}

/// Full pipeline; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (scenario, tol_scale = 1.0, seed = None, out_dir = None))]
fn run(
    py: Python<'_>,
    scenario: &PyScenario,
    tol_scale: f64,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let opts = options(tol_scale, seed, out_dir)?;
    to_dict(py, &scenario::run_scenario(&scenario.inner, &opts))
}

/// Inequality and identity checks; `checks` is a list of names such as
/// `"hardy"` or `"pohozaev"` (all when omitted).
#[pyfunction]
#[pyo3(signature = (scenario, checks = None, tol_scale = 1.0, seed = None))]
fn verify(
    py: Python<'_>,
    scenario: &PyScenario,
    checks: Option<Vec<String>>,
    tol_scale: f64,
    seed: Option<u64>,
) -> PyResult<Py<PyAny>> {
    let names = match checks {
        None => CheckName::ALL.to_vec(),
        Some(v) => v
            .iter()
            .map(|s| s.parse::<CheckName>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py_err)?,
    };
    let opts = options(tol_scale, seed, None)?;
    to_dict(py, &scenario::verify_suite(&scenario.inner, &names, &opts))
}

/// `(σ⁺, σ⁻)` for eigenvalue `mu` in dimension `dimension`.
#[pyfunction]
fn characteristic_exponents(dimension: usize, mu: f64) -> PyResult<(f64, f64)> {
    let e = modal_field::characteristic_exponents(dimension, mu).map_err(to_py_err)?;
    Ok((e.sigma_plus, e.sigma_minus))
}

/// Lowest `count` values of `{(α - j)² - a0 : j ∈ Z}`.
#[pyfunction]
#[pyo3(signature = (alpha, a0 = 0.0, count = 10))]
fn aharonov_bohm_spectrum(alpha: f64, a0: f64, count: usize) -> Vec<f64> {
    closed_form_ab_spectrum(alpha, a0, count)
}

#[pymodule]
pub fn almgren(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", scenario::TOOL_VERSION)?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyPotential>()?;
    m.add_class::<PySpectrum>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(characteristic_exponents, m)?)?;
    m.add_function(wrap_pyfunction!(aharonov_bohm_spectrum, m)?)?;
    Ok(())
}
