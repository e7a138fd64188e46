//! Python bindings: configuration, the closed-form building blocks, and the
//! two schedulers. Scalar helpers mirror the library API one-to-one; run
//! results come back as plain dictionaries.

use cfiot_core::config::SystemConfig;
use cfiot_core::detequiv;
use cfiot_core::netmodel;
use cfiot_core::simctl::{self, RunSummary, SlotRecord};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py_err(e: cfiot_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// System configuration. Starts from the desk-scale profile; keys follow the
/// `key = value` config-file format.
#[pyclass]
#[derive(Clone)]
struct Config {
    inner: SystemConfig,
}

#[pymethods]
impl Config {
    #[new]
    fn new() -> Self {
        Config { inner: SystemConfig::default() }
    }

    /// Full-scale reference profile.
    #[staticmethod]
    fn table1() -> Self {
        Config { inner: SystemConfig::table1() }
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        SystemConfig::load(std::path::Path::new(path))
            .map(|inner| Config { inner })
            .map_err(to_py_err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        SystemConfig::parse(text).map(|inner| Config { inner }).map_err(to_py_err)
    }

    /// Sets one key (config-file syntax) and re-validates.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set_key(key, value).map_err(to_py_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_key_values()
    }

    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    fn noise_power(&self) -> f64 {
        self.inner.sigma2()
    }

    fn pilot_snr(&self) -> f64 {
        self.inner.pilot_snr()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(l={}, n={}, k={}, k_a={}, tau={}, seed={})",
            self.inner.aps,
            self.inner.antennas,
            self.inner.sensors,
            self.inner.k_active,
            self.inner.tau,
            self.inner.seed
        )
    }
}

/// Three-slope path loss in dB at distance `d` metres.
#[pyfunction]
fn path_loss_db(d: f64, cfg: &Config) -> PyResult<f64> {
    netmodel::path_loss_db(d, &cfg.inner).map_err(to_py_err)
}

/// Frequency/height constant of the path-loss model, in dB.
#[pyfunction]
fn reference_loss_db(cfg: &Config) -> f64 {
    netmodel::reference_loss_db(&cfg.inner)
}

/// Solves the interference fixed point; returns (varsigma list, z_cal).
#[pyfunction]
fn fixed_point(betas: Vec<f64>, e_p: f64, tau: usize) -> PyResult<(Vec<f64>, f64)> {
    detequiv::fixed_point(&betas, e_p, tau, 1e-10, 500)
        .map(|fp| (fp.varsigma, fp.z_cal))
        .map_err(to_py_err)
}

/// Both trace functionals for one interferer set; returns (z_cal, z_tilde).
#[pyfunction]
fn trace_functionals(betas: Vec<f64>, e_p: f64, tau: usize) -> PyResult<(f64, f64)> {
    let fp = detequiv::fixed_point(&betas, e_p, tau, 1e-10, 500).map_err(to_py_err)?;
    let zt = detequiv::trace_tilde(&fp, &betas, e_p, tau).map_err(to_py_err)?;
    Ok((fp.z_cal, zt))
}

/// Limiting mean-square channel-estimate value.
#[pyfunction]
fn bar_gamma(beta: f64, z_cal: f64, e_p: f64) -> f64 {
    detequiv::bar_gamma(beta, z_cal, e_p)
}

fn summary_dict<'py>(
    py: Python<'py>,
    records: &[SlotRecord],
    summary: &RunSummary,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("seed", summary.seed)?;
    d.set_item("t_max", summary.t_max)?;
    d.set_item("r_max", summary.r_max)?;
    d.set_item("harvest_slots", summary.harvest_slots)?;
    d.set_item("transmit_slots", summary.transmit_slots)?;
    d.set_item("min_avg_rate", summary.min_avg_rate.clone())?;
    d.set_item("sigma_hat", summary.sigma_hat.clone())?;
    d.set_item("x_bar", summary.x_bar.clone())?;
    d.set_item("y_bar", summary.y_bar.clone())?;
    let mut min_b = f64::INFINITY;
    let mut max_drift_violation = f64::NEG_INFINITY;
    for rec in records {
        for &b in &rec.b {
            min_b = min_b.min(b);
        }
        max_drift_violation = max_drift_violation.max(rec.phi - rec.phi_bar);
    }
    d.set_item("min_battery", min_b)?;
    d.set_item("max_drift_violation", max_drift_violation)?;
    Ok(d)
}

/// Runs the long-term scheduler; returns the summary as a dict.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, cfg: &Config) -> PyResult<Bound<'py, PyDict>> {
    let (records, summary) = simctl::run_lyapunov(&cfg.inner).map_err(to_py_err)?;
    summary_dict(py, &records, &summary)
}

/// Runs the greedy benchmark; returns the summary as a dict.
#[pyfunction]
fn baseline<'py>(py: Python<'py>, cfg: &Config) -> PyResult<Bound<'py, PyDict>> {
    let (records, summary) = simctl::run_greedy(&cfg.inner).map_err(to_py_err)?;
    summary_dict(py, &records, &summary)
}

/// Monte Carlo validation of the closed forms; returns per-sensor rows as
/// `(k, closed_form, mc_mean, mc_std)` tuples plus the active-set sweep.
#[pyfunction]
fn validate<'py>(py: Python<'py>, cfg: &Config, trials: usize) -> PyResult<Bound<'py, PyDict>> {
    let tables = simctl::validate_asymptotics(&cfg.inner, trials).map_err(to_py_err)?;
    let d = PyDict::new_bound(py);
    d.set_item("active", tables.active.clone())?;
    d.set_item("n_trials", tables.n_trials)?;
    let rows = |rows: &[simctl::ValidationRow]| -> Vec<(usize, f64, f64, f64)> {
        rows.iter()
            .map(|r| (r.sensor, r.closed_form, r.mc_mean, r.mc_std))
            .collect()
    };
    d.set_item("gamma", rows(&tables.gamma_rows))?;
    d.set_item("energy", rows(&tables.energy_rows))?;
    d.set_item("rate", rows(&tables.rate_rows))?;
    d.set_item("ka_sweep", tables.ka_rows.clone())?;
    Ok(d)
}

#[pymodule]
fn cfiot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_function(wrap_pyfunction!(path_loss_db, m)?)?;
    m.add_function(wrap_pyfunction!(reference_loss_db, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(trace_functionals, m)?)?;
    m.add_function(wrap_pyfunction!(bar_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
