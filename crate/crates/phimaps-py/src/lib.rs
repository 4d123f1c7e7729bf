//! Python bindings for `phimaps`.
//!
//! Grids, targets and maps are built from the same keyword specs as the TOML
//! configs, e.g. `Grid(model="round_sphere", dim=2, nodes=32)`. Reports come
//! back as plain dicts.

use std::sync::Arc;

use phimaps::cli::config::{DomainSpec, MapSpec, ProfileSpec, TargetSpec};
use phimaps::cli::suite::{parse_mutation, SuiteLevel};
use phimaps::cli::CliError;
use phimaps::energy::phi_energy;
use phimaps::flow::{gradient_flow, homotopy_shrink, FlowTrace, StepRule};
use phimaps::ssu::{
    average_variation_from_ssu, average_variation_into_ssu, ellipsoid_ssu_threshold, hypersurface_p_ssu,
    hypersurface_phi3_ssu, minimal_submanifold_criterion, sphere_is_phi3_ssu, AverageVariationReport,
};
use phimaps::variation::{
    euler_lagrange_residual, fd_first_variation, first_variation, second_variation, VariationField,
};
use phimaps::{DomainGrid, MapField, PrincipalCurvatures, Target};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::{json, Value};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn numeric(e: phimaps::Error) -> PyErr {
    err(CliError::from(e))
}

/// Keyword arguments to a serde spec, through the `json` module.
fn spec<T: serde::de::DeserializeOwned>(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let text: String = match kwargs {
        Some(d) => py.import("json")?.call_method1("dumps", (d,))?.extract()?,
        None => "{}".into(),
    };
    serde_json::from_str(&text).map_err(err)
}

fn to_py<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

fn average_json(r: &AverageVariationReport) -> Value {
    json!({
        "total": r.total,
        "bound": r.bound,
        "per_axis": r.per_axis,
        "destabilizer_index": r.destabilizer_index,
        "residual": r.residual,
        "within_bound": r.within_bound,
    })
}

fn trace_json(t: &FlowTrace) -> Value {
    json!({
        "energies": t.energies,
        "step_sizes": t.step_sizes,
        "residuals": t.residuals,
        "ratios": t.ratios,
        "predicted_ratios": t.predicted_ratios,
        "empirical_rho": t.empirical_rho(),
    })
}

/// A discretized domain manifold.
#[pyclass(frozen, name = "Grid")]
struct PyGrid {
    spec: DomainSpec,
    grid: Arc<DomainGrid>,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let spec: DomainSpec = spec(py, kwargs)?;
        let grid = spec.build().map_err(err)?;
        Ok(PyGrid { spec, grid })
    }

    fn __len__(&self) -> usize {
        self.grid.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn volume(&self) -> f64 {
        self.grid.volume()
    }

    fn __repr__(&self) -> String {
        format!("Grid({:?})", self.spec)
    }
}

/// An embedded target manifold.
#[pyclass(frozen, name = "Target")]
struct PyTarget {
    spec: TargetSpec,
    target: Target,
}

#[pymethods]
impl PyTarget {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let spec: TargetSpec = spec(py, kwargs)?;
        let target = spec.build().map_err(err)?;
        Ok(PyTarget { spec, target })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.target.name()
    }

    fn __repr__(&self) -> String {
        format!("Target({:?})", self.spec)
    }
}

/// A map from a grid into a target, with its derivative jets.
#[pyclass(frozen, name = "Map")]
struct PyMap {
    map: MapField,
}

#[pymethods]
impl PyMap {
    /// `kind` and its parameters as in the `[map]` config section.
    #[new]
    #[pyo3(signature = (grid, target, seed = 1, **kwargs))]
    fn new(
        py: Python<'_>,
        grid: &PyGrid,
        target: &PyTarget,
        seed: u64,
        kwargs: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let spec: MapSpec = spec(py, kwargs)?;
        let map = spec.build(grid.grid.clone(), target.target.clone(), seed).map_err(err)?;
        Ok(PyMap { map })
    }

    fn __len__(&self) -> usize {
        self.map.len()
    }

    /// Nodal values, one row per node.
    fn values(&self) -> Vec<Vec<f64>> {
        (0..self.map.len()).map(|i| self.map.value(i).to_vec()).collect()
    }

    #[pyo3(signature = (k = 3))]
    fn energy(&self, k: u32) -> PyResult<f64> {
        phi_energy(&self.map, k, None).map_err(numeric)
    }

    fn constraint_residual(&self) -> f64 {
        self.map.constraint_residual()
    }

    fn euler_lagrange_residual(&self) -> f64 {
        euler_lagrange_residual(&self.map)
    }

    /// First variation along the tangential part of an ambient coordinate axis.
    fn first_variation(&self, axis: usize) -> PyResult<f64> {
        let v = VariationField::tangential_axis(&self.map, axis).map_err(numeric)?;
        first_variation(&self.map, &v).map_err(numeric)
    }

    /// Finite-difference estimate of the same quantity, with its error estimate.
    fn first_variation_fd(&self, axis: usize) -> PyResult<(f64, f64)> {
        let v = VariationField::tangential_axis(&self.map, axis).map_err(numeric)?;
        let est = fd_first_variation(&self.map, &v).map_err(numeric)?;
        Ok((est.value, est.error))
    }

    fn second_variation(&self, axis_a: usize, axis_b: usize) -> PyResult<f64> {
        let v = VariationField::tangential_axis(&self.map, axis_a).map_err(numeric)?;
        let w = VariationField::tangential_axis(&self.map, axis_b).map_err(numeric)?;
        second_variation(&self.map, &v, &w).map_err(numeric)
    }

    fn average_variation_into_ssu<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let r = average_variation_into_ssu(&self.map).map_err(numeric)?;
        to_py(py, &average_json(&r))
    }

    fn average_variation_from_ssu<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let r = average_variation_from_ssu(&self.map).map_err(numeric)?;
        to_py(py, &average_json(&r))
    }

    /// Explicit gradient descent; returns the final map and its trace.
    #[pyo3(signature = (max_steps = 200, initial_step = 1e-2))]
    fn gradient_flow<'py>(&self, py: Python<'py>, max_steps: usize, initial_step: f64) -> PyResult<(PyMap, Bound<'py, PyAny>)> {
        let rule = StepRule {
            initial: initial_step,
            ..StepRule::default()
        };
        let (map, trace) = gradient_flow(&self.map, max_steps, rule).map_err(numeric)?;
        Ok((PyMap { map }, to_py(py, &trace_json(&trace))?))
    }

    /// Conformal energy shrinking for maps into a high-dimensional sphere.
    #[pyo3(signature = (iterations = 20))]
    fn homotopy_shrink<'py>(&self, py: Python<'py>, iterations: usize) -> PyResult<(PyMap, Bound<'py, PyAny>)> {
        let run = homotopy_shrink(&self.map, iterations).map_err(numeric)?;
        let mut report = trace_json(&run.trace);
        report["predicted_rho"] = json!(run.schedule.map(|s| s.rho));
        report["descent"] = json!(run.trace.descent);
        Ok((PyMap { map: run.map }, to_py(py, &report)?))
    }
}

#[pyfunction]
fn sphere_is_ssu(m: usize) -> bool {
    sphere_is_phi3_ssu(m)
}

/// SSU test for a hypersurface from its principal curvatures; `p` selects the p-energy form.
#[pyfunction]
#[pyo3(signature = (curvatures, p = None))]
fn hypersurface_is_ssu(curvatures: Vec<f64>, p: Option<f64>) -> PyResult<bool> {
    let lambda = PrincipalCurvatures::new(curvatures);
    match p {
        Some(p) => hypersurface_p_ssu(&lambda, p),
        None => hypersurface_phi3_ssu(&lambda),
    }
    .map_err(numeric)
}

#[pyfunction]
fn minimal_submanifold_is_ssu(ric_min: f64, k: usize, lambda_max: f64) -> PyResult<bool> {
    minimal_submanifold_criterion(ric_min, k, lambda_max).map_err(numeric)
}

#[pyfunction]
fn ellipsoid_threshold(axes: Vec<f64>, k: usize) -> PyResult<f64> {
    ellipsoid_ssu_threshold(&axes, k).map_err(numeric)
}

/// Hessian-comparison constant for a curvature profile given by keywords
/// (`profile`, `max_rate`, `min_rate`, `negative`, `positive`, `decay`).
#[pyfunction]
#[pyo3(signature = (m, **kwargs))]
fn lambda_constant(py: Python<'_>, m: usize, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<f64> {
    let profile: ProfileSpec = spec(py, kwargs)?;
    let profile = profile.build().map_err(err)?;
    phimaps::liouville::lambda_constant(&profile, m).map_err(numeric)
}

/// Runs the oracle suite and returns its report.
#[pyfunction]
#[pyo3(signature = (level = "quick", mutation = "none"))]
fn verify_suite<'py>(py: Python<'py>, level: &str, mutation: &str) -> PyResult<Bound<'py, PyAny>> {
    let level: SuiteLevel = level.parse().map_err(err)?;
    let mutation = parse_mutation(mutation).map_err(err)?;
    let report = py.detach(|| phimaps::cli::verify_suite(level, mutation));
    let mut value = serde_json::to_value(&report).map_err(err)?;
    value["pass"] = json!(report.pass());
    to_py(py, &value)
}

#[pymodule]
#[pyo3(name = "phimaps")]
pub fn phimaps_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyTarget>()?;
    m.add_class::<PyMap>()?;
    m.add_function(wrap_pyfunction!(sphere_is_ssu, m)?)?;
    m.add_function(wrap_pyfunction!(hypersurface_is_ssu, m)?)?;
    m.add_function(wrap_pyfunction!(minimal_submanifold_is_ssu, m)?)?;
    m.add_function(wrap_pyfunction!(ellipsoid_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_constant, m)?)?;
    m.add_function(wrap_pyfunction!(verify_suite, m)?)?;
    Ok(())
}
