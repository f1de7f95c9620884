//! Python bindings: solve scenarios, query the emitted tariff and indirect
//! utility, run sweeps. Structured results cross the boundary as JSON text.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use tariff_core::error::TariffError;
use tariff_core::scenario::{self, Scenario as CoreScenario, ScenarioConfig, SweepParameter};

create_exception!(tariffopt, SolverError, PyException, "Any failure reported by the solver.");
create_exception!(tariffopt, ConfigError, SolverError, "Invalid scenario configuration or outside option.");
create_exception!(tariffopt, AssumptionError, SolverError, "The model violates a solver assumption.");

fn to_py(e: TariffError) -> PyErr {
    let msg = e.to_string();
    match e {
        TariffError::Config(_) | TariffError::InvalidReservation(_) => ConfigError::new_err(msg),
        TariffError::AssumptionViolation { .. } => AssumptionError::new_err(msg),
        _ => SolverError::new_err(msg),
    }
}

fn json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| SolverError::new_err(e.to_string()))
}

/// A solved scenario.
#[pyclass(module = "tariffopt", frozen)]
struct Scenario {
    inner: CoreScenario,
}

#[pymethods]
impl Scenario {
    /// Solves the scenario described by a JSON configuration string.
    #[new]
    fn new(config_json: &str) -> PyResult<Self> {
        let config = ScenarioConfig::from_json(config_json).map_err(to_py)?;
        Self::solve(config)
    }

    /// Solves the scenario stored in a JSON file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::solve(ScenarioConfig::load(&path).map_err(to_py)?)
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.model.gamma()
    }

    #[getter]
    fn time_grid(&self) -> Vec<f64> {
        self.inner.model.time_grid().to_vec()
    }

    /// Optimal value of the relaxed problem.
    #[getter]
    fn relaxed_value(&self) -> f64 {
        self.inner.relaxed_value()
    }

    /// Served intervals of the solution.
    #[getter]
    fn components(&self) -> Vec<(f64, f64)> {
        self.inner.components()
    }

    /// Boundary as JSON: `{"kind": "threshold", "x0": ..}` or
    /// `{"kind": "two_sided", "a0": .., "b0": ..}`.
    fn boundary_json(&self) -> PyResult<String> {
        json(&self.inner.boundary())
    }

    /// Price of consumption `c` at time node `time_index`.
    fn price(&self, time_index: usize, c: f64) -> PyResult<f64> {
        self.check_time(time_index)?;
        Ok(self.inner.tariff.price(time_index, c))
    }

    /// Best response `(consumption, surplus)` of type `x`.
    fn best_response(&self, time_index: usize, x: f64) -> PyResult<(f64, f64)> {
        self.check_time(time_index)?;
        self.inner.tariff.best_response(&self.inner.model, time_index, x).map_err(to_py)
    }

    /// Indirect utility of type `x` at time node `time_index`.
    fn indirect_utility(&self, time_index: usize, x: f64) -> PyResult<f64> {
        self.check_time(time_index)?;
        Ok(self.inner.utility.value(time_index, x))
    }

    /// Surplus of type `x` summed over time.
    fn total_surplus(&self, x: f64) -> f64 {
        self.inner.utility.total(x)
    }

    /// Outside option of type `x`.
    fn reservation(&self, x: f64) -> f64 {
        self.inner.model.reservation().value(x)
    }

    /// Full report as JSON; `oracle` adds the brute-force audits.
    #[pyo3(signature = (oracle = false))]
    fn report_json(&self, oracle: bool) -> PyResult<String> {
        json(&self.inner.report(oracle).map_err(to_py)?)
    }

    /// Writes the report and CSV tables into `out_dir`; returns the report as JSON.
    #[pyo3(signature = (out_dir, oracle = false))]
    fn write_outputs(&self, out_dir: PathBuf, oracle: bool) -> PyResult<String> {
        let report = self.inner.report(oracle).map_err(to_py)?;
        self.inner.write_outputs(&report, &out_dir).map_err(to_py)?;
        json(&report)
    }
}

impl Scenario {
    fn solve(config: ScenarioConfig) -> PyResult<Self> {
        config.validate().map_err(to_py)?;
        Ok(Scenario {
            inner: CoreScenario::solve(config).map_err(to_py)?,
        })
    }

    fn check_time(&self, time_index: usize) -> PyResult<()> {
        let n = self.inner.model.n_times();
        if time_index < n {
            Ok(())
        } else {
            Err(pyo3::exceptions::PyIndexError::new_err(format!(
                "time_index {time_index} out of range for {n} time nodes"
            )))
        }
    }
}

/// Sweep of `H_scale` or `k_scale` over `values`; rows as a JSON array.
#[pyfunction]
fn sweep_json(config_json: &str, parameter: &str, values: Vec<f64>) -> PyResult<String> {
    let config = ScenarioConfig::from_json(config_json).map_err(to_py)?;
    config.validate().map_err(to_py)?;
    let parameter: SweepParameter = parameter.parse().map_err(to_py)?;
    json(&scenario::sweep(&config, parameter, &values).map_err(to_py)?)
}

/// Same as the `tariff solve` command; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir, oracle = false, full_tariff = false))]
fn run_scenario(config_path: PathBuf, out_dir: PathBuf, oracle: bool, full_tariff: bool) -> PyResult<String> {
    json(&scenario::run_scenario(&config_path, &out_dir, oracle, full_tariff).map_err(to_py)?)
}

#[pymodule]
fn tariffopt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(sweep_json, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add("SolverError", py.get_type::<SolverError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("AssumptionError", py.get_type::<AssumptionError>())?;
    Ok(())
}
