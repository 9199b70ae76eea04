//! Python bindings for the `anyon_noise` crate.
//!
//! Matrices cross the boundary as nested lists of Python `complex`.

use anyon_noise::algebra::{self, HilbertSpace, Link, Operator, StatisticalAngle};
use anyon_noise::cli::{self, Command, Preset};
use anyon_noise::lindblad::{self, ChannelKind, LindbladChannel};
use anyon_noise::noise::{self, BathSpectrum, CorrelationMatrix, NoiseSpec};
use anyon_noise::protection::{self, BlochVector, TwoLinkSweepModel};
use anyon_noise::stochastic::{self, DensityMatrix, Scheme, SimulationGrid, StochasticModel};
use anyon_noise::{CMatrix, Error};
use num_complex::Complex64;
use pyo3::exceptions::{PyMemoryError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

type Rows = Vec<Vec<Complex64>>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Size { .. } => PyMemoryError::new_err(e.to_string()),
        Error::Trajectory { .. } | Error::Ensemble { .. } | Error::Numeric(_) | Error::Accuracy(_) | Error::Positivity { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_rows(m: &CMatrix) -> Rows {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn from_rows(rows: &Rows) -> PyResult<CMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn angle(theta: f64) -> PyResult<StatisticalAngle> {
    StatisticalAngle::new(theta).map_err(py_err)
}

fn parse_scheme(name: &str) -> PyResult<Scheme> {
    match name {
        "stratonovich" => Ok(Scheme::Stratonovich),
        "ito" => Ok(Scheme::Ito),
        "exact_unitary" => Ok(Scheme::ExactUnitary),
        other => Err(PyValueError::new_err(format!("unknown scheme `{other}`"))),
    }
}

/// JW-dressed annihilation operators of a lattice, one matrix per site.
#[pyfunction]
#[pyo3(signature = (n_sites, theta, cutoff = 1))]
fn jw_anyon_ops(n_sites: usize, theta: f64, cutoff: usize) -> PyResult<Vec<Rows>> {
    let space = HilbertSpace::new(n_sites, cutoff).map_err(py_err)?;
    let ops = algebra::build_jw_anyon_ops(&space, angle(theta)?).map_err(py_err)?;
    Ok(ops.iter().map(|o| to_rows(o.matrix())).collect())
}

/// Largest residual of the deformed commutation relations.
#[pyfunction]
#[pyo3(signature = (n_sites, theta, cutoff = 1))]
fn algebra_residual(n_sites: usize, theta: f64, cutoff: usize) -> PyResult<f64> {
    let space = HilbertSpace::new(n_sites, cutoff).map_err(py_err)?;
    let theta = angle(theta)?;
    let ops = algebra::build_jw_anyon_ops(&space, theta).map_err(py_err)?;
    algebra::verify_distorted_algebra(&ops, theta).map_err(py_err)
}

/// Exchange current of link `(i, j)` on a hardcore lattice.
#[pyfunction]
#[pyo3(signature = (n_sites, i, j, theta, phase_offset = 0.0))]
fn exchange_current(n_sites: usize, i: usize, j: usize, theta: f64, phase_offset: f64) -> PyResult<Rows> {
    let space = HilbertSpace::hardcore(n_sites).map_err(py_err)?;
    let theta = angle(theta)?;
    let ops = algebra::build_jw_anyon_ops(&space, theta).map_err(py_err)?;
    let link = Link::new(i, j, 1.0).with_offset(phase_offset);
    let k = algebra::exchange_current(&ops, &link, theta).map_err(py_err)?;
    Ok(to_rows(k.matrix()))
}

/// Two-mode current `−sinθ σx + cosθ σy`.
#[pyfunction]
fn two_mode_k(theta: f64) -> PyResult<Rows> {
    Ok(to_rows(algebra::two_mode_k(angle(theta)?).matrix()))
}

/// Dephasing rate `2J²D` of white noise.
#[pyfunction]
fn wiener_rate(d_phi: f64, coupling: f64) -> PyResult<f64> {
    let spec = NoiseSpec::Wiener { d_phi };
    spec.validate().map_err(py_err)?;
    Ok(noise::effective_rate(&spec, coupling))
}

/// Motional-narrowing rate `2J²σ²τ_c`.
#[pyfunction]
fn ou_rate(sigma: f64, tau_c: f64, coupling: f64) -> PyResult<f64> {
    let spec = NoiseSpec::OrnsteinUhlenbeck { sigma, tau_c };
    spec.validate().map_err(py_err)?;
    Ok(noise::effective_rate(&spec, coupling))
}

/// Ohmic-bath rate `2J²S(0)`.
#[pyfunction]
fn ohmic_bath_rate(eta: f64, temperature: f64, cutoff: f64, coupling: f64) -> PyResult<f64> {
    let spectrum = BathSpectrum::ohmic(eta, temperature, cutoff).map_err(py_err)?;
    Ok(noise::effective_rate(&NoiseSpec::QuantumBath { spectrum }, coupling))
}

/// Eigenvalues of a real correlation matrix (validates PSD and unit diagonal).
#[pyfunction]
fn correlation_eigenvalues(rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(CorrelationMatrix::from_rows(&rows).map_err(py_err)?.eigenvalues())
}

/// `(γ₊, γ₋)` for two links with correlation `xi`.
#[pyfunction]
fn two_link_rates(xi: f64, coupling: f64) -> PyResult<(f64, f64)> {
    protection::two_link_rates(xi, coupling).map_err(py_err)
}

#[pyfunction]
fn dephasing_rate_bloch(theta: f64, gamma: f64, r: [f64; 3]) -> PyResult<f64> {
    let r = BlochVector::new(r).map_err(py_err)?;
    Ok(protection::dephasing_rate_bloch(angle(theta)?, gamma, &r))
}

/// `(θ*, γ_min)`; `θ*` is `None` when the in-plane component vanishes.
#[pyfunction]
fn optimal_angle(r: [f64; 3], gamma: f64) -> PyResult<(Option<f64>, f64)> {
    let r = BlochVector::new(r).map_err(py_err)?;
    let report = protection::optimal_angle(&r, gamma);
    Ok((report.theta_star, report.gamma_min))
}

/// Rows `(xi, theta, gamma/J)` of the two-link protected-mode sweep.
#[pyfunction]
#[pyo3(signature = (xi_values, theta_grid, coupling = 0.1, r = [1.0, 0.0, 0.0], offsets = [0.0, 0.0], d_phi = 1.0))]
fn sweep_theta(
    xi_values: Vec<f64>,
    theta_grid: Vec<f64>,
    coupling: f64,
    r: [f64; 3],
    offsets: [f64; 2],
    d_phi: f64,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let model = TwoLinkSweepModel {
        coupling,
        d_phi,
        offsets,
        state: BlochVector::new(r).map_err(py_err)?,
    };
    let table = protection::sweep_theta(&xi_values, &theta_grid, &model).map_err(py_err)?;
    Ok(table.rows.iter().map(|row| (row.xi, row.theta, row.gamma_over_j)).collect())
}

fn channels_from(channels: Vec<(Rows, f64, bool)>) -> PyResult<Vec<LindbladChannel>> {
    channels
        .into_iter()
        .map(|(jump, rate, hermitian)| {
            let op = Operator::new(from_rows(&jump)?).map_err(py_err)?;
            let kind = if hermitian { ChannelKind::HermitianDephasing } else { ChannelKind::Relaxation };
            LindbladChannel::new(op, rate, kind).map_err(py_err)
        })
        .collect()
}

/// Vectorized Liouvillian (column stacking).
///
/// `channels` holds `(jump, rate, hermitian)` triples.
#[pyfunction]
fn liouvillian(h0: Rows, channels: Vec<(Rows, f64, bool)>) -> PyResult<Rows> {
    let h0 = Operator::new(from_rows(&h0)?).map_err(py_err)?;
    let l = lindblad::build_liouvillian(&h0, &channels_from(channels)?).map_err(py_err)?;
    Ok(to_rows(l.matrix()))
}

/// JSON spectral summary of a Liouvillian matrix.
#[pyfunction]
fn spectral_report(matrix: Rows) -> PyResult<String> {
    let l = lindblad::Liouvillian::from_matrix(from_rows(&matrix)?).map_err(py_err)?;
    let report = lindblad::spectral_report(&l).map_err(py_err)?;
    serde_json::to_string(&report.summary()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Master-equation states at the recorded grid times.
#[pyfunction]
#[pyo3(signature = (h0, channels, rho0, t_final, dt, record_stride = None))]
fn propagate_master(
    h0: Rows,
    channels: Vec<(Rows, f64, bool)>,
    rho0: Rows,
    t_final: f64,
    dt: f64,
    record_stride: Option<usize>,
) -> PyResult<(Vec<f64>, Vec<Rows>)> {
    let h0 = Operator::new(from_rows(&h0)?).map_err(py_err)?;
    let rho0 = DensityMatrix::new(from_rows(&rho0)?).map_err(py_err)?;
    let grid = SimulationGrid::new(t_final, dt, record_stride).map_err(py_err)?;
    let states = lindblad::propagate_master(&h0, &channels_from(channels)?, &rho0, &grid).map_err(py_err)?;
    Ok((grid.times(), states.iter().map(|s| to_rows(s.matrix())).collect()))
}

/// Ensemble-averaged density matrices of a white-noise model.
///
/// `correlation` is the link correlation matrix; it is multiplied by `d_phi`.
#[pyfunction]
#[pyo3(signature = (h0, currents, amplitudes, rho0, t_final, dt, n_traj, d_phi = 1.0, correlation = None, scheme = "stratonovich", master_seed = 0, record_stride = None))]
#[allow(clippy::too_many_arguments)]
fn ensemble_average(
    py: Python<'_>,
    h0: Rows,
    currents: Vec<Rows>,
    amplitudes: Vec<f64>,
    rho0: Rows,
    t_final: f64,
    dt: f64,
    n_traj: usize,
    d_phi: f64,
    correlation: Option<Vec<Vec<f64>>>,
    scheme: &str,
    master_seed: u64,
    record_stride: Option<usize>,
) -> PyResult<(Vec<f64>, Vec<Rows>)> {
    let h0 = Operator::new(from_rows(&h0)?).map_err(py_err)?;
    let currents = currents
        .iter()
        .map(|k| Operator::new(from_rows(k)?).map_err(py_err))
        .collect::<PyResult<Vec<_>>>()?;
    let d = match correlation {
        Some(rows) => CorrelationMatrix::from_rows(&rows).map_err(py_err)?,
        None => CorrelationMatrix::identity(currents.len()),
    };
    let rho0 = DensityMatrix::new(from_rows(&rho0)?).map_err(py_err)?;
    let grid = SimulationGrid::new(t_final, dt, record_stride).map_err(py_err)?;
    let scheme = parse_scheme(scheme)?;
    let model = StochasticModel::new(&h0, &currents, &amplitudes, NoiseSpec::Wiener { d_phi }, d, rho0, grid).map_err(py_err)?;
    let result = py
        .detach(|| stochastic::ensemble_average(&model, n_traj, master_seed, scheme))
        .map_err(py_err)?;
    Ok((result.times, result.mean_states.iter().map(|s| to_rows(s.matrix())).collect()))
}

/// Runs a CLI command in-process and returns the JSON payload.
///
/// `config` is a JSON object merged over `preset` (the command's own
/// preset when omitted); `overrides` are `key.path=value` strings.
#[pyfunction]
#[pyo3(signature = (command, config = None, preset = None, overrides = Vec::new(), workers = 1))]
fn run_command(
    py: Python<'_>,
    command: &str,
    config: Option<&str>,
    preset: Option<&str>,
    overrides: Vec<String>,
    workers: usize,
) -> PyResult<(bool, String)> {
    let cmd = match command {
        "algebra-check" => Command::AlgebraCheck,
        "sweep" => Command::Sweep,
        "converge" => Command::Converge,
        "spectrum" => Command::Spectrum,
        "lifetime" => Command::Lifetime,
        "dfs" => Command::Dfs,
        other => return Err(PyValueError::new_err(format!("unknown command `{other}`"))),
    };
    let preset = match preset {
        None => cmd.natural_preset(),
        Some("default") => Preset::Default,
        Some("fig2") => Preset::Fig2,
        Some("two-link-dfs") => Preset::TwoLinkDfs,
        Some("ep-sweep") => Preset::EpSweep,
        Some(other) => return Err(PyValueError::new_err(format!("unknown preset `{other}`"))),
    };
    let overlay = match config {
        Some(text) => Some(serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?),
        None => None,
    };
    let cfg = cli::resolve_config(preset, overlay, &overrides, None).map_err(|e| PyValueError::new_err(e.message))?;
    let out = py
        .detach(|| cli::execute(cmd, &cfg, workers.max(1)))
        .map_err(|e| PyRuntimeError::new_err(e.message))?;
    Ok((out.passed, out.payload.to_string()))
}

#[pymodule]
#[pyo3(name = "anyon_noise")]
fn anyon_noise_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(jw_anyon_ops, m)?)?;
    m.add_function(wrap_pyfunction!(algebra_residual, m)?)?;
    m.add_function(wrap_pyfunction!(exchange_current, m)?)?;
    m.add_function(wrap_pyfunction!(two_mode_k, m)?)?;
    m.add_function(wrap_pyfunction!(wiener_rate, m)?)?;
    m.add_function(wrap_pyfunction!(ou_rate, m)?)?;
    m.add_function(wrap_pyfunction!(ohmic_bath_rate, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(two_link_rates, m)?)?;
    m.add_function(wrap_pyfunction!(dephasing_rate_bloch, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_angle, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_theta, m)?)?;
    m.add_function(wrap_pyfunction!(liouvillian, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_report, m)?)?;
    m.add_function(wrap_pyfunction!(propagate_master, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_average, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    Ok(())
}
