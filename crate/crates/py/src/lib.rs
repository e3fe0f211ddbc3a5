//! Python bindings. Reports and sweep rows cross the boundary as plain dicts.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyList;
use serde::Serialize;

use sfc_sched::sweep::{emit_results, run_sweep, OutputFormat, SweepVar};
use sfc_sched::{Policy, SchedError};

fn err(e: SchedError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Scenario", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: sfc_sched::Scenario,
}

#[pymethods]
impl PyScenario {
    /// Built-in defaults.
    #[new]
    fn new() -> Self {
        PyScenario { inner: sfc_sched::Scenario::default() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        sfc_sched::Scenario::from_toml_str(text).map(|inner| PyScenario { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        sfc_sched::parse_scenario(path).map(|inner| PyScenario { inner }).map_err(err)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.workload.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.workload.seed = seed;
    }

    #[getter]
    fn request_count(&self) -> usize {
        self.inner.workload.request_count
    }

    #[setter]
    fn set_request_count(&mut self, n: usize) {
        self.inner.workload.request_count = n;
    }

    #[getter]
    fn background_load(&self) -> f64 {
        self.inner.workload.background_load_fraction
    }

    #[setter]
    fn set_background_load(&mut self, value: f64) {
        self.inner.workload.background_load_fraction = value;
    }

    #[getter]
    fn policy(&self) -> &'static str {
        self.inner.policy.name()
    }

    #[setter]
    fn set_policy(&mut self, name: &str) -> PyResult<()> {
        self.inner.policy = name.parse().map_err(err)?;
        Ok(())
    }

    /// Restricts sweeps to the given policies, points and repetitions.
    #[pyo3(signature = (policies=None, demand_points=None, load_points=None, repetitions=None))]
    fn configure_sweep(
        &mut self,
        policies: Option<Vec<String>>,
        demand_points: Option<Vec<usize>>,
        load_points: Option<Vec<f64>>,
        repetitions: Option<usize>,
    ) -> PyResult<()> {
        let sweep = &mut self.inner.sweep;
        if let Some(names) = policies {
            sweep.policies = names.iter().map(|n| n.parse::<Policy>()).collect::<Result<_, _>>().map_err(err)?;
        }
        if let Some(p) = demand_points {
            sweep.demand_points = p;
        }
        if let Some(p) = load_points {
            sweep.load_points = p;
        }
        if let Some(r) = repetitions {
            sweep.repetitions = r;
        }
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(policy={}, requests={}, seed={})",
            self.inner.policy, self.inner.workload.request_count, self.inner.workload.seed
        )
    }
}

/// Simulates the scenario and returns the metrics report.
#[pyfunction]
#[pyo3(signature = (scenario, policy=None))]
fn run<'py>(py: Python<'py>, scenario: &PyScenario, policy: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let policy = match policy {
        Some(name) => name.parse().map_err(err)?,
        None => scenario.inner.policy,
    };
    let s = scenario.inner.clone();
    let out = py.detach(move || sfc_sched::run_with_policy(&s, policy)).map_err(err)?;
    to_py(py, &out.report)
}

fn sweep_rows(py: Python<'_>, scenario: &PyScenario, var: &str) -> PyResult<Vec<sfc_sched::ResultRow>> {
    let var: SweepVar = var.parse().map_err(err)?;
    let s = scenario.inner.clone();
    py.detach(move || run_sweep(&s, var)).map_err(err)
}

/// Sweep rows as a list of dicts.
#[pyfunction]
#[pyo3(signature = (scenario, var="demand"))]
fn sweep<'py>(py: Python<'py>, scenario: &PyScenario, var: &str) -> PyResult<Bound<'py, PyAny>> {
    let rows = sweep_rows(py, scenario, var)?;
    to_py(py, &rows)
}

/// Sweep rows rendered as CSV text.
#[pyfunction]
#[pyo3(signature = (scenario, var="demand"))]
fn sweep_csv(py: Python<'_>, scenario: &PyScenario, var: &str) -> PyResult<String> {
    let rows = sweep_rows(py, scenario, var)?;
    let mut buf = Vec::new();
    emit_results(&rows, OutputFormat::Csv, &mut buf).map_err(err)?;
    String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Mean M/D/1 sojourn time in seconds.
#[pyfunction]
fn link_delay(lambda_pps: f64, mu_pps: f64) -> PyResult<f64> {
    sfc_sched::link_delay(lambda_pps, mu_pps).map_err(err)
}

#[pyfunction]
fn policies<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
    PyList::new(py, Policy::ALL.iter().map(|p| p.name()))
}

#[pymodule]
fn sfc_sched_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_csv, m)?)?;
    m.add_function(wrap_pyfunction!(link_delay, m)?)?;
    m.add_function(wrap_pyfunction!(policies, m)?)?;
    Ok(())
}
