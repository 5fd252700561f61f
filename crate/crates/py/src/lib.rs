//! Python bindings: group elements, points of the sphere, atomic measures
//! and the experiment runner.

use std::collections::BTreeMap;

use core_lib::limits::lyapunov_kingman;
use core_lib::measures::{elementarity_check, fixture, MatrixMeasure, MeasureDoc, FIXTURE_NAMES};
use core_lib::mobius::{apply, classify, fixed_points, operator_norm, spherical_distance, theta};
use core_lib::runner::{execute, ExperimentConfig, Subcommand};
use core_lib::transfer::gap_estimate;
use core_lib::{AtomicMeasure, ElementarityVerdict, GroupElement, MobiusClass, ProjPoint, SphereGrid};
use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Element of `PSL(2,C)`.
#[pyclass(name = "GroupElement", module = "sl2walk", skip_from_py_object)]
#[derive(Clone)]
struct PyGroupElement(GroupElement);

#[pymethods]
impl PyGroupElement {
    #[new]
    fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> PyResult<Self> {
        GroupElement::new(a, b, c, d).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(GroupElement::IDENTITY)
    }

    fn entries(&self) -> [Complex64; 4] {
        self.0.entries()
    }

    fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    fn __mul__(&self, other: PyRef<'_, Self>) -> Self {
        Self(self.0 * other.0)
    }

    fn apply(&self, p: PyRef<'_, PyProjPoint>) -> PyProjPoint {
        PyProjPoint(apply(&self.0, &p.0))
    }

    fn operator_norm(&self) -> f64 {
        operator_norm(&self.0)
    }

    /// `½ log(∥g v∥² / ∥v∥²)` at `p = [v]`.
    fn theta(&self, p: PyRef<'_, PyProjPoint>) -> f64 {
        theta(&self.0, &p.0)
    }

    fn classify(&self) -> &'static str {
        match classify(&self.0) {
            MobiusClass::Identity => "identity",
            MobiusClass::Elliptic => "elliptic",
            MobiusClass::Parabolic => "parabolic",
            MobiusClass::Loxodromic => "loxodromic",
        }
    }

    fn fixed_points(&self) -> PyResult<Vec<PyProjPoint>> {
        let pts = fixed_points(&self.0).map_err(value_err)?;
        Ok(pts.into_iter().map(PyProjPoint).collect())
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

/// Point `[z₀ : z₁]` of the Riemann sphere.
#[pyclass(name = "ProjPoint", module = "sl2walk", skip_from_py_object)]
#[derive(Clone)]
struct PyProjPoint(ProjPoint);

#[pymethods]
impl PyProjPoint {
    #[new]
    fn new(z0: Complex64, z1: Complex64) -> PyResult<Self> {
        ProjPoint::from_vec(z0, z1).map(Self).map_err(value_err)
    }

    /// The point `z = z₀/z₁`, or `∞` for `None`.
    #[staticmethod]
    #[pyo3(signature = (z=None))]
    fn affine(z: Option<Complex64>) -> Self {
        Self(z.map_or(ProjPoint::INFINITY, ProjPoint::affine))
    }

    fn to_affine(&self) -> Option<Complex64> {
        self.0.to_affine()
    }

    fn to_sphere(&self) -> [f64; 3] {
        self.0.to_sphere()
    }

    /// Chordal distance.
    fn distance(&self, other: PyRef<'_, Self>) -> f64 {
        spherical_distance(&self.0, &other.0)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

/// Finitely supported probability measure on `PSL(2,C)`.
#[pyclass(name = "Measure", module = "sl2walk", skip_from_py_object)]
#[derive(Clone)]
struct PyMeasure(AtomicMeasure);

#[pymethods]
impl PyMeasure {
    #[new]
    fn new(atoms: Vec<(PyRef<'_, PyGroupElement>, f64)>) -> PyResult<Self> {
        let atoms = atoms.into_iter().map(|(g, w)| (g.0, w)).collect();
        AtomicMeasure::new(atoms).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn fixture(name: &str) -> PyResult<Self> {
        fixture(name).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn fixture_names() -> Vec<&'static str> {
        FIXTURE_NAMES.to_vec()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let doc: MeasureDoc = serde_json::from_str(text).map_err(value_err)?;
        AtomicMeasure::from_json(&doc).map(Self).map_err(value_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0.to_json()).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn atoms(&self) -> Vec<(PyGroupElement, f64)> {
        self.0.atoms().iter().map(|(g, w)| (PyGroupElement(*g), *w)).collect()
    }

    /// One of `compact`, `finite_orbit`, `non_elementary`, `inconclusive`.
    #[pyo3(signature = (depth=6))]
    fn elementarity(&self, depth: usize) -> &'static str {
        match elementarity_check(&self.0, depth) {
            ElementarityVerdict::ElementaryCompact => "compact",
            ElementarityVerdict::ElementaryFiniteOrbit(_) => "finite_orbit",
            ElementarityVerdict::NonElementary(_) => "non_elementary",
            ElementarityVerdict::Inconclusive(_) => "inconclusive",
        }
    }

    /// `(γ̂, stderr)` from `(1/n) log ∥g_n ⋯ g_1∥`.
    #[pyo3(signature = (n=1000, trials=2000, seed=42))]
    fn lyapunov(&self, py: Python<'_>, n: usize, trials: usize, seed: u64) -> PyResult<(f64, f64)> {
        let mu = MatrixMeasure::from(self.0.clone());
        let r = py.detach(|| lyapunov_kingman(&mu, n, trials, seed)).map_err(value_err)?;
        Ok((r.gamma_hat, r.stderr))
    }

    /// Estimated norm of the `n`-th power of the form pull-back.
    #[pyo3(signature = (n=4, iters=2000, seed=42))]
    fn gap(&self, py: Python<'_>, n: usize, iters: usize, seed: u64) -> PyResult<f64> {
        let r = py
            .detach(|| gap_estimate(&self.0, n, iters, seed, &SphereGrid::default_mesh()))
            .map_err(value_err)?;
        Ok(r.norm_estimate)
    }
}

/// Runs one subcommand from a JSON config; returns
/// `(summary_json, {csv_name: contents}, passed)`.
#[pyfunction]
#[pyo3(signature = (subcommand, config_json=None))]
fn run(
    py: Python<'_>,
    subcommand: &str,
    config_json: Option<&str>,
) -> PyResult<(String, BTreeMap<String, String>, bool)> {
    let sub: Subcommand = subcommand.parse().map_err(value_err)?;
    let cfg = match config_json {
        Some(text) => ExperimentConfig::from_json_str(text).map_err(value_err)?,
        None => ExperimentConfig::default(),
    };
    let outcome = py.detach(|| execute(sub, &cfg)).map_err(value_err)?;
    let summary = serde_json::to_string_pretty(&outcome.summary).map_err(value_err)?;
    Ok((summary, outcome.csv, outcome.passed))
}

#[pymodule]
fn sl2walk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGroupElement>()?;
    m.add_class::<PyProjPoint>()?;
    m.add_class::<PyMeasure>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
