//! Python extension module wrapping the spectral and spreading-speed API.
//!
//! The surface mirrors the CLI verbs: load a model, check its standing
//! assumptions, evaluate λ₁,z, maximize over shifts, compute critical and
//! directional spreading speeds, and classify the long-time regime. All
//! numerical entry points release the GIL while the Rust solver runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use kpp_spectra::floquet::{self, DEFAULT_EIG_MAX_ITER, DEFAULT_EIG_TOL};
use kpp_spectra::grid::{BoundaryKind, Grid};
use kpp_spectra::model::{validate_assumptions, ModelSpec};
use kpp_spectra::speeds::{
    self, DEFAULT_ANGULAR_STEPS, DEFAULT_LAMBDA_MAX_TOL, DEFAULT_SPEED_CELLS, DEFAULT_SPEED_TOL,
};
use kpp_spectra::{cauchy, KppError};

/// Input mistakes become `ValueError`; numerical failures (blow-up,
/// non-convergence, CFL) become `RuntimeError`.
fn as_py_err(e: KppError) -> PyErr {
    match e {
        KppError::Parse { .. }
        | KppError::Eval(..)
        | KppError::Model(..)
        | KppError::Grid(..)
        | KppError::Precondition(..)
        | KppError::Io(..)
        | KppError::Json(..) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A KPP reaction–diffusion model with space-time periodic coefficients.
///
/// Thin immutable handle around the parsed model file; every method builds
/// its own grid, so one `Model` can serve calls at different resolutions.
#[pyclass(frozen, module = "kpp_spectra_py")]
struct Model {
    spec: ModelSpec,
}

impl Model {
    fn grid(&self, cells: usize) -> PyResult<Grid> {
        Grid::periodic_cell(&self.spec, &vec![cells; self.spec.dim]).map_err(as_py_err)
    }
}

#[pymethods]
impl Model {
    /// Load a model from a JSON file.
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            spec: ModelSpec::load(path).map_err(as_py_err)?,
        })
    }

    /// Parse a model from JSON text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            spec: ModelSpec::from_json_str(text).map_err(as_py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> Option<&str> {
        self.spec.name.as_deref()
    }

    /// Number of components N.
    #[getter]
    fn n_comp(&self) -> usize {
        self.spec.n_comp
    }

    /// Spatial dimension.
    #[getter]
    fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Temporal period T.
    #[getter]
    fn period_t(&self) -> f64 {
        self.spec.period_t
    }

    /// Spatial periods (L_1, ..., L_n).
    #[getter]
    fn periods_l(&self) -> Vec<f64> {
        self.spec.periods_l.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(name={:?}, n_comp={}, dim={})",
            self.spec.name.as_deref().unwrap_or("unnamed"),
            self.spec.n_comp,
            self.spec.dim
        )
    }

    /// Check ellipticity, essential nonnegativity, irreducibility, and
    /// positivity of the saturation matrix on a sampling lattice.
    ///
    /// Raises `ValueError` naming the failed hypotheses.
    #[pyo3(signature = (samples = 32))]
    fn validate(&self, py: Python<'_>, samples: usize) -> PyResult<()> {
        let spec = self.spec.clone();
        let report = py
            .detach(move || validate_assumptions(&spec, samples))
            .map_err(as_py_err)?;
        if report.all_pass() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!(
                "assumption check failed: {}",
                report.failures().join(", ")
            )))
        }
    }

    /// Generalized principal eigenvalue λ₁,z for the decay exponent `z`
    /// (length = spatial dimension).
    #[pyo3(signature = (z, cells = DEFAULT_SPEED_CELLS, tol = DEFAULT_EIG_TOL))]
    fn eig(&self, py: Python<'_>, z: Vec<f64>, cells: usize, tol: f64) -> PyResult<f64> {
        if z.len() != self.spec.dim {
            return Err(PyValueError::new_err(format!(
                "z has dimension {}, model has dimension {}",
                z.len(),
                self.spec.dim
            )));
        }
        let spec = self.spec.clone();
        let grid = self.grid(cells)?;
        py.detach(move || {
            floquet::principal_eigenvalue(
                &spec,
                &grid,
                &z,
                tol,
                DEFAULT_EIG_MAX_ITER,
                BoundaryKind::Periodic,
            )
        })
        .map(|r| r.lambda)
        .map_err(as_py_err)
    }

    /// λ₁′ = λ₁,0, the zero-shift eigenvalue deciding extinction.
    #[pyo3(signature = (cells = DEFAULT_SPEED_CELLS))]
    fn lambda_prime(&self, py: Python<'_>, cells: usize) -> PyResult<f64> {
        let spec = self.spec.clone();
        py.detach(move || speeds::lambda_prime(&spec, cells))
            .map_err(as_py_err)
    }

    /// (λ₁, z_max): the supremum of z ↦ λ₁,z and its maximizer.
    #[pyo3(signature = (cells = DEFAULT_SPEED_CELLS, tol = DEFAULT_LAMBDA_MAX_TOL))]
    fn lambda_max(&self, py: Python<'_>, cells: usize, tol: f64) -> PyResult<(f64, Vec<f64>)> {
        let spec = self.spec.clone();
        py.detach(move || speeds::lambda_max(&spec, tol, cells))
            .map_err(as_py_err)
    }

    /// (c*_e, μ*): critical spreading speed in direction `e` and the decay
    /// rate attaining it. Requires λ₁ < 0.
    #[pyo3(signature = (e, cells = DEFAULT_SPEED_CELLS, tol = DEFAULT_SPEED_TOL))]
    fn critical_speed(
        &self,
        py: Python<'_>,
        e: Vec<f64>,
        cells: usize,
        tol: f64,
    ) -> PyResult<(f64, f64)> {
        let spec = self.spec.clone();
        py.detach(move || speeds::critical_speed(&spec, &e, tol, cells))
            .map_err(as_py_err)
    }

    /// Envelope speed c^μ_e of the linearized front with decay rate `mu`.
    #[pyo3(signature = (e, mu, cells = DEFAULT_SPEED_CELLS))]
    fn speed_at_decay(&self, py: Python<'_>, e: Vec<f64>, mu: f64, cells: usize) -> PyResult<f64> {
        let spec = self.spec.clone();
        py.detach(move || speeds::speed_at_decay(&spec, &e, mu, cells))
            .map_err(as_py_err)
    }

    /// Directional spreading speed c^FG_e (the Freidlin–Gärtner envelope).
    #[pyo3(signature = (e, cells = DEFAULT_SPEED_CELLS, angular_steps = DEFAULT_ANGULAR_STEPS))]
    fn fg_speed(
        &self,
        py: Python<'_>,
        e: Vec<f64>,
        cells: usize,
        angular_steps: usize,
    ) -> PyResult<f64> {
        let spec = self.spec.clone();
        py.detach(move || speeds::fg_speed(&spec, &e, angular_steps, cells))
            .map(|r| r.fg_speed)
            .map_err(as_py_err)
    }

    /// Long-time regime from the signs of λ₁′ and λ₁:
    /// `"Extinction"`, `"Persistence"`, or `"Conditional"`.
    #[pyo3(signature = (cells = 32))]
    fn classify(&self, py: Python<'_>, cells: usize) -> PyResult<String> {
        let spec = self.spec.clone();
        py.detach(move || cauchy::classify_regime(&spec, cells))
            .map(|v| format!("{:?}", v.regime))
            .map_err(as_py_err)
    }
}

#[pymodule]
fn kpp_spectra_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
