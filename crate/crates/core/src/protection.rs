//! Closed-form protection theory on the two-mode manifold.
//!
//! For a state with Bloch vector `r` the single-link dephasing rate is
//! `γ(θ) = Γ[1 − (n(θ)·r)²]` with `n(θ) = (−sinθ, cosθ, 0)`. Several
//! correlated links give `γ = Σ_ab Γ_ab Cov(K_a, K_b)`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::algebra::{two_mode_k, Operator, StatisticalAngle};
use crate::linalg::{self, c};
use crate::noise::{self, CorrelationMatrix};
use crate::{CMatrix, Error, Result, C64};

/// Rates below this count as zero when deciding whether a lifetime diverges.
pub const ZERO_RATE: f64 = 1e-15;

/// Points of the dense grid used to cross-check the optimal angle.
pub const DENSE_GRID: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct BlochVector {
    r: [f64; 3],
}

impl BlochVector {
    pub fn new(r: [f64; 3]) -> Result<Self> {
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validity("Bloch vector has non-finite components".into()));
        }
        let len = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1.0 + 1e-12 {
            return Err(Error::Validity(format!("Bloch vector length {len} exceeds 1")));
        }
        Ok(Self { r })
    }

    /// Bloch vector of a normalized qubit state.
    pub fn from_state(u: &DVector<C64>) -> Result<Self> {
        if u.len() != 2 {
            return Err(Error::Shape(format!("Bloch vector needs a qubit state, got dimension {}", u.len())));
        }
        check_normalized(u)?;
        let rho = u * u.adjoint();
        Self::new([
            (&rho * linalg::pauli_x()).trace().re,
            (&rho * linalg::pauli_y()).trace().re,
            (&rho * linalg::pauli_z()).trace().re,
        ])
    }

    pub fn components(&self) -> [f64; 3] {
        self.r
    }

    /// `‖(r_x, r_y)‖`.
    pub fn in_plane_norm(&self) -> f64 {
        self.r[0].hypot(self.r[1])
    }

    /// `arg(r_x + i r_y)`.
    pub fn azimuth(&self) -> f64 {
        self.r[1].atan2(self.r[0])
    }

    /// Density matrix `½(I + r·σ)`.
    pub fn density_matrix(&self) -> CMatrix {
        (linalg::identity(2)
            + linalg::pauli_x() * c(self.r[0], 0.0)
            + linalg::pauli_y() * c(self.r[1], 0.0)
            + linalg::pauli_z() * c(self.r[2], 0.0))
            * c(0.5, 0.0)
    }
}

impl TryFrom<[f64; 3]> for BlochVector {
    type Error = Error;
    fn try_from(r: [f64; 3]) -> Result<Self> {
        Self::new(r)
    }
}

impl From<BlochVector> for [f64; 3] {
    fn from(b: BlochVector) -> Self {
        b.r
    }
}

/// `n(θ) = (−sinθ, cosθ, 0)`, the Bloch direction of `K_θ`.
pub fn current_axis(theta: f64) -> [f64; 3] {
    [-theta.sin(), theta.cos(), 0.0]
}

fn check_normalized(u: &DVector<C64>) -> Result<()> {
    let n2 = u.norm_squared();
    if !((n2 - 1.0).abs() <= 1e-12) {
        return Err(Error::Validity(format!("state vector has squared norm {n2}, expected 1")));
    }
    Ok(())
}

fn check_hermitian(op: &Operator, dim: usize) -> Result<()> {
    if op.dim() != dim {
        return Err(Error::Shape(format!("operator dimension {} vs state dimension {dim}", op.dim())));
    }
    if !op.is_hermitian(1e-12) {
        return Err(Error::Validity(format!(
            "operator must be Hermitian (defect {:e})",
            op.hermiticity_defect()
        )));
    }
    Ok(())
}

fn expect(op: &CMatrix, u: &DVector<C64>) -> C64 {
    u.dotc(&(op * u))
}

/// `⟨u|½{A,B}|u⟩ − ⟨u|A|u⟩⟨u|B|u⟩`.
pub fn covariance(a: &Operator, b: &Operator, u: &DVector<C64>) -> Result<f64> {
    check_hermitian(a, u.len())?;
    check_hermitian(b, u.len())?;
    check_normalized(u)?;
    let anti = linalg::anticommutator(a.matrix(), b.matrix()) * c(0.5, 0.0);
    Ok(expect(&anti, u).re - expect(a.matrix(), u).re * expect(b.matrix(), u).re)
}

/// `⟨K²⟩ − ⟨K⟩²`, with rounding noise down to `−1e-14` clipped to zero.
pub fn variance(k: &Operator, u: &DVector<C64>) -> Result<f64> {
    let v = covariance(k, k, u)?;
    Ok(if (-1e-14..0.0).contains(&v) { 0.0 } else { v })
}

/// Mixed-state covariance `tr(ρ ½{A,B}) − tr(ρA) tr(ρB)`.
pub fn covariance_in(a: &CMatrix, b: &CMatrix, rho: &CMatrix) -> f64 {
    let anti = linalg::anticommutator(a, b) * c(0.5, 0.0);
    (rho * anti).trace().re - (rho * a).trace().re * (rho * b).trace().re
}

/// `Γ[1 − (n(θ)·r)²]`.
pub fn dephasing_rate_bloch(theta: StatisticalAngle, gamma: f64, r: &BlochVector) -> f64 {
    let n = current_axis(theta.radians());
    let p = r.r.iter().zip(n).map(|(a, b)| a * b).sum::<f64>();
    gamma * (1.0 - p * p)
}

/// Representative of `x mod π` in `[0, π)`.
pub fn reduce_mod_pi(x: f64) -> f64 {
    let y = x.rem_euclid(PI);
    if y >= PI {
        0.0
    } else {
        y
    }
}

fn circular_distance_mod_pi(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Lifetime `1/γ_total`, infinite when the total rate vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lifetime {
    pub infinite: bool,
    /// `None` when infinite.
    pub value: Option<f64>,
    pub total_rate: f64,
}

pub fn effective_lifetime(theta: StatisticalAngle, gamma: f64, gamma_res: f64, r: &BlochVector) -> Lifetime {
    lifetime_from_rate(gamma_res + dephasing_rate_bloch(theta, gamma, r))
}

fn lifetime_from_rate(total: f64) -> Lifetime {
    if total < ZERO_RATE {
        Lifetime {
            infinite: true,
            value: None,
            total_rate: total,
        }
    } else {
        Lifetime {
            infinite: false,
            value: Some(1.0 / total),
            total_rate: total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectionReport {
    /// Optimal angle in `[0, π)`; `None` when the rate does not depend on θ.
    pub theta_star: Option<f64>,
    pub theta_star_undefined: bool,
    pub gamma_min: f64,
    pub theta_grid: Vec<f64>,
    pub gamma_of_theta: Vec<f64>,
    /// Minimizer on the dense grid.
    pub grid_argmin: f64,
    pub grid_step: f64,
    /// Closed form and dense grid agree within one grid step.
    pub grid_check_passed: bool,
    pub lifetime: Option<Lifetime>,
}

/// Optimal angle `θ* = φ_u + π/2 (mod π)`, which aligns `n(θ)` with the
/// in-plane part of `r`, and the residual rate `Γ(1 − ‖r∥‖²)`.
pub fn optimal_angle(r: &BlochVector, gamma: f64) -> ProtectionReport {
    let rho_par = r.in_plane_norm();
    let undefined = rho_par < 1e-12;
    let theta_star = (!undefined).then(|| reduce_mod_pi(r.azimuth() + FRAC_PI_2));
    let gamma_min = gamma * (1.0 - rho_par * rho_par);

    let step = PI / DENSE_GRID as f64;
    let theta_grid: Vec<f64> = (0..DENSE_GRID).map(|k| k as f64 * step).collect();
    let gamma_of_theta: Vec<f64> = theta_grid
        .iter()
        .map(|&t| dephasing_rate_bloch(StatisticalAngle::new(t).expect("grid angles are finite"), gamma, r))
        .collect();
    let (arg, &grid_min) = gamma_of_theta
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("dense grid is nonempty");
    let grid_argmin = theta_grid[arg];
    let grid_check_passed = match theta_star {
        Some(t) => circular_distance_mod_pi(t, grid_argmin) <= step * (1.0 + 1e-9),
        None => gamma_of_theta.iter().all(|&g| (g - grid_min).abs() <= 1e-12 * gamma.abs().max(1.0)),
    };
    ProtectionReport {
        theta_star,
        theta_star_undefined: undefined,
        gamma_min,
        theta_grid,
        gamma_of_theta,
        grid_argmin,
        grid_step: step,
        grid_check_passed,
        lifetime: None,
    }
}

/// [`optimal_angle`] plus the lifetime at `θ*` (or at any θ when `θ*` is
/// undefined).
pub fn protection_report(r: &BlochVector, gamma: f64, gamma_res: f64) -> Result<ProtectionReport> {
    if !(gamma.is_finite() && gamma >= 0.0 && gamma_res.is_finite() && gamma_res >= 0.0) {
        return Err(Error::Parameter(format!("rates must be finite and ≥ 0 (Γ = {gamma}, γ_res = {gamma_res})")));
    }
    let mut rep = optimal_angle(r, gamma);
    rep.lifetime = Some(lifetime_from_rate(gamma_res + rep.gamma_min));
    Ok(rep)
}

/// `Σ_ab Γ_ab Cov_u(K_a, K_b)`.
pub fn multilink_rate(gamma: &CorrelationMatrix, ks: &[Operator], u: &DVector<C64>) -> Result<f64> {
    check_normalized(u)?;
    multilink_rate_in(gamma, ks, &(u * u.adjoint()))
}

/// Mixed-state form of [`multilink_rate`].
pub fn multilink_rate_in(gamma: &CorrelationMatrix, ks: &[Operator], rho: &CMatrix) -> Result<f64> {
    if ks.len() != gamma.dim() {
        return Err(Error::Shape(format!("{} currents for a {}x{} rate matrix", ks.len(), gamma.dim(), gamma.dim())));
    }
    for k in ks {
        check_hermitian(k, rho.nrows())?;
    }
    let g = gamma.entries();
    let mut total = 0.0;
    for a in 0..ks.len() {
        for b in 0..ks.len() {
            total += g[(a, b)].re * covariance_in(ks[a].matrix(), ks[b].matrix(), rho);
        }
    }
    Ok(total)
}

/// `γ_± = 2J²(1 ± ξ)`.
pub fn two_link_rates(xi: f64, coupling: f64) -> Result<(f64, f64)> {
    if !(xi.is_finite() && xi.abs() <= 1.0) {
        return Err(Error::Validity(format!("correlation coefficient |ξ| ≤ 1 required, got {xi}")));
    }
    let base = 2.0 * coupling * coupling;
    Ok((base * (1.0 + xi), base * (1.0 - xi)))
}

/// Two links of amplitude `J` on the two-mode manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLinkSweepModel {
    pub coupling: f64,
    #[serde(default = "unit")]
    pub d_phi: f64,
    /// Phase offsets `δ_a` added to θ on each link.
    #[serde(default)]
    pub offsets: [f64; 2],
    pub state: BlochVector,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub xi: f64,
    pub theta: f64,
    pub gamma_over_j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub xi: f64,
    pub argmin_theta: f64,
    pub min_gamma_over_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub curves: Vec<CurveSummary>,
}

impl SweepTable {
    pub fn curve(&self, xi: f64) -> Vec<SweepRow> {
        self.rows.iter().copied().filter(|r| r.xi == xi).collect()
    }
}

/// Evaluates the multilink rate over a θ grid for every ξ, in units of `J`.
pub fn sweep_theta(xi_values: &[f64], theta_grid: &[f64], model: &TwoLinkSweepModel) -> Result<SweepTable> {
    if xi_values.is_empty() || theta_grid.is_empty() {
        return Err(Error::Parameter("ξ and θ grids must be nonempty".into()));
    }
    if !(model.coupling.is_finite() && model.coupling > 0.0) {
        return Err(Error::Parameter(format!("coupling J must be positive, got {}", model.coupling)));
    }
    if !(model.d_phi.is_finite() && model.d_phi >= 0.0) {
        return Err(Error::Parameter(format!("d_phi must be finite and ≥ 0, got {}", model.d_phi)));
    }
    let rho = model.state.density_matrix();
    let mut rows = Vec::with_capacity(xi_values.len() * theta_grid.len());
    let mut curves = Vec::with_capacity(xi_values.len());
    for &xi in xi_values {
        let d = CorrelationMatrix::two_link(xi)?;
        let scaled = CorrelationMatrix::from_complex(d.entries() * c(model.d_phi, 0.0))?;
        let gamma = noise::rate_matrix(&[model.coupling; 2], &scaled)?;
        let mut best = (f64::INFINITY, f64::NAN);
        for &theta in theta_grid {
            let ks = model
                .offsets
                .iter()
                .map(|&off| Ok(two_mode_k(StatisticalAngle::new(theta + off)?)))
                .collect::<Result<Vec<_>>>()?;
            let g = multilink_rate_in(&gamma, &ks, &rho)? / model.coupling;
            if g < best.0 {
                best = (g, theta);
            }
            rows.push(SweepRow {
                xi,
                theta,
                gamma_over_j: g,
            });
        }
        curves.push(CurveSummary {
            xi,
            argmin_theta: best.1,
            min_gamma_over_j: best.0,
        });
    }
    Ok(SweepTable { rows, curves })
}

/// `n` equally spaced points on `[a, b]`, endpoints included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}
