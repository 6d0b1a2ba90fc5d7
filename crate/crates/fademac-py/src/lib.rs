//! Python bindings exposing the main types and operations: system
//! parameters, fading descriptors, the throughput function, water-filling
//! solvers, one-shot thresholds and the Monte Carlo experiment runner.

use std::str::FromStr;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use fademac_core as core;

fn to_py_err(e: core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A per-user channel-gain distribution.
#[pyclass(name = "Fading")]
#[derive(Clone)]
struct PyFading {
    inner: core::FadingDistribution,
}

#[pymethods]
impl PyFading {
    #[staticmethod]
    fn exponential(rate: f64) -> PyResult<Self> {
        Ok(Self {
            inner: core::FadingDistribution::exponential(rate).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn deterministic(value: f64) -> PyResult<Self> {
        Ok(Self {
            inner: core::FadingDistribution::deterministic(value).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn tabulated(grid: Vec<(f64, f64)>) -> PyResult<Self> {
        Ok(Self {
            inner: core::FadingDistribution::tabulated_inverse_cdf(grid).map_err(to_py_err)?,
        })
    }

    /// Mean gain `h_o`.
    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    /// Inverse-CDF sample for a uniform draw in `[0, 1)`.
    fn sample(&self, uniform_draw: f64) -> PyResult<f64> {
        self.inner.sample(uniform_draw).map_err(to_py_err)
    }

    /// `E[max(H, floor)]`.
    fn expected_max_with(&self, floor: f64) -> PyResult<f64> {
        self.inner.expected_max_with(floor).map_err(to_py_err)
    }

    /// `(node, weight)` pairs for expectations over the gain.
    fn quadrature_nodes(&self, order: usize) -> PyResult<Vec<(f64, f64)>> {
        self.inner.quadrature_nodes(order).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!("Fading({:?})", self.inner.kind())
    }
}

/// Static system description: users, horizon, bandwidth, slot length,
/// noise power, per-user budgets and fading.
#[pyclass(name = "SystemParams")]
#[derive(Clone)]
struct PySystemParams {
    inner: core::SystemParams,
}

#[pymethods]
impl PySystemParams {
    #[new]
    fn new(
        n_users: usize,
        horizon: usize,
        bandwidth_hz: f64,
        slot_seconds: f64,
        noise_watts: f64,
        energy_budgets: Vec<f64>,
        fading: Vec<PyFading>,
    ) -> PyResult<Self> {
        let inner = core::SystemParams::new(
            n_users,
            horizon,
            bandwidth_hz,
            slot_seconds,
            noise_watts,
            energy_budgets,
            fading.into_iter().map(|f| f.inner).collect(),
        )
        .map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.n_users
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon
    }

    #[getter]
    fn energy_budgets(&self) -> Vec<f64> {
        self.inner.energy_budgets.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "SystemParams(n_users={}, horizon={}, budgets={:?})",
            self.inner.n_users, self.inner.horizon, self.inner.energy_budgets
        )
    }
}

/// One-slot sum-throughput of the MAC in bits.
#[pyfunction]
fn sum_throughput(params: &PySystemParams, energies: Vec<f64>, gains: Vec<f64>) -> PyResult<f64> {
    core::sum_throughput(&params.inner, &energies, &gains).map_err(to_py_err)
}

/// Water-fills a budget over slots with the given interference-plus-noise
/// to gain ratios; returns `(allocation, water_level)`.
#[pyfunction]
fn water_fill(noise_ratios: Vec<f64>, budget: f64) -> PyResult<(Vec<f64>, f64)> {
    core::water_fill(&core::WaterFillProblem {
        noise_ratios,
        budget,
    })
    .map_err(to_py_err)
}

fn realization_from_rows(
    params: &core::SystemParams,
    gains: Vec<Vec<f64>>,
) -> PyResult<core::ChannelRealization> {
    let realization = core::ChannelRealization::from_rows(&gains).map_err(to_py_err)?;
    realization.matches(params).map_err(to_py_err)?;
    Ok(realization)
}

/// Optimal offline allocation for a full `T x N` gain matrix; returns
/// `(allocation_rows, iterations, objective_trace_nats)`.
#[pyfunction]
fn iterative_water_fill(
    params: &PySystemParams,
    gains: Vec<Vec<f64>>,
) -> PyResult<(Vec<Vec<f64>>, usize, Vec<f64>)> {
    let realization = realization_from_rows(&params.inner, gains)?;
    let solution =
        core::iterative_water_fill(&params.inner, &realization, core::IwfConfig::default())
            .map_err(to_py_err)?;
    let rows = (0..params.inner.horizon)
        .map(|t| solution.allocation.row(t).to_vec())
        .collect();
    Ok((rows, solution.iterations, solution.objective_trace))
}

/// KKT residuals of an allocation; returns
/// `(water_levels, stationarity, complementary_slackness, budget)`.
#[pyfunction]
fn verify_kkt(
    params: &PySystemParams,
    gains: Vec<Vec<f64>>,
    allocation: Vec<Vec<f64>>,
) -> PyResult<(Vec<f64>, f64, f64, f64)> {
    let realization = realization_from_rows(&params.inner, gains)?;
    let alloc = core::AllocationMatrix::from_rows(&allocation).map_err(to_py_err)?;
    let report = core::verify_kkt(&params.inner, &realization, &alloc).map_err(to_py_err)?;
    Ok((
        report.water_levels,
        report.stationarity_residual,
        report.complementary_slackness_residual,
        report.budget_residual,
    ))
}

/// Per-user one-shot threshold sequences (earliest slot first, last entry
/// is the zero boundary past the deadline).
#[pyfunction]
fn one_shot_thresholds(params: &PySystemParams) -> PyResult<Vec<Vec<f64>>> {
    let thresholds = core::one_shot_thresholds(&params.inner).map_err(to_py_err)?;
    Ok((0..params.inner.n_users)
        .map(|i| thresholds.sequence(i).to_vec())
        .collect())
}

/// Runs a Monte Carlo experiment and returns rows of
/// `(sweep_value, policy, mean_bits, stderr_bits)`.
///
/// `policies` entries: offline_iwf, dp_optimal, cec, one_shot,
/// equal_energy. `snr_db_sweep` maps SNR values to per-user budgets.
#[pyfunction]
#[pyo3(signature = (params, policies, n_realizations, seed, snr_db_sweep = None))]
fn run_experiment(
    params: &PySystemParams,
    policies: Vec<String>,
    n_realizations: usize,
    seed: u64,
    snr_db_sweep: Option<Vec<f64>>,
) -> PyResult<Vec<(f64, String, f64, f64)>> {
    let policies = policies
        .iter()
        .map(|name| core::PolicyKind::from_str(name))
        .collect::<core::Result<Vec<_>>>()
        .map_err(to_py_err)?;
    let spec = core::ExperimentSpec {
        params: params.inner.clone(),
        policies,
        n_realizations,
        seed,
        sweep: snr_db_sweep.map(|values| core::Sweep::SnrDb { values }),
        solver: core::SolverSettings::default(),
    };
    let result = core::run_experiment(&spec).map_err(to_py_err)?;
    let mut rows = Vec::new();
    for point in result.points {
        for stats in point.stats {
            rows.push((
                point.sweep_value,
                stats.policy.name().to_string(),
                stats.mean_bits,
                stats.stderr_bits,
            ));
        }
    }
    Ok(rows)
}

#[pymodule]
fn fademac(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFading>()?;
    m.add_class::<PySystemParams>()?;
    m.add_function(wrap_pyfunction!(sum_throughput, m)?)?;
    m.add_function(wrap_pyfunction!(water_fill, m)?)?;
    m.add_function(wrap_pyfunction!(iterative_water_fill, m)?)?;
    m.add_function(wrap_pyfunction!(verify_kkt, m)?)?;
    m.add_function(wrap_pyfunction!(one_shot_thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
