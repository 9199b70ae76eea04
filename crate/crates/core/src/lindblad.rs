//! Master-equation propagation and spectral analysis of the Liouvillian.
//!
//! Superoperators act on column-stacked density matrices,
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`, so
//! `𝓛 = −i(I⊗H − Hᵀ⊗I) + Σ γ [L̄⊗L − ½(I⊗L†L + (L†L)ᵀ⊗I)]`.

use serde::{Deserialize, Serialize};

use crate::algebra::{build_jw_anyon_ops, collective_currents, two_mode_k, CollectiveCurrent, HilbertSpace, Operator, StatisticalAngle};
use crate::linalg::{self, c};
use crate::noise::{self, CorrelationMatrix};
use crate::stochastic::{DensityMatrix, SimulationGrid};
use crate::{CMatrix, Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    HermitianDephasing,
    Relaxation,
}

/// One dissipator `γ 𝒟[L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladChannel {
    jump: Operator,
    rate: f64,
    kind: ChannelKind,
    jump_sq: CMatrix,
}

impl LindbladChannel {
    pub fn new(jump: Operator, rate: f64, kind: ChannelKind) -> Result<Self> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::Parameter(format!("channel rate must be finite and ≥ 0, got {rate}")));
        }
        if kind == ChannelKind::HermitianDephasing && !jump.is_hermitian(1e-12) {
            return Err(Error::Validity(format!(
                "dephasing channel needs a Hermitian operator (defect {:e})",
                jump.hermiticity_defect()
            )));
        }
        let jump_sq = jump.matrix().adjoint() * jump.matrix();
        Ok(Self {
            jump,
            rate,
            kind,
            jump_sq,
        })
    }

    pub fn jump(&self) -> &Operator {
        &self.jump
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.jump.dim()
    }

    /// Action of the dissipator on `rho`.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let l = self.jump.matrix();
        match self.kind {
            ChannelKind::HermitianDephasing => {
                let inner = l * rho - rho * l;
                (l * &inner - &inner * l) * c(-0.5 * self.rate, 0.0)
            }
            ChannelKind::Relaxation => {
                let sandwich = l * rho * l.adjoint();
                let anti = &self.jump_sq * rho + rho * &self.jump_sq;
                (sandwich - anti * c(0.5, 0.0)) * c(self.rate, 0.0)
            }
        }
    }
}

/// `ρ ↦ −(Γ/2)[K,[K,ρ]]` for Hermitian `K`.
pub fn dephasing_generator(k: &Operator, gamma: f64) -> Result<LindbladChannel> {
    LindbladChannel::new(k.clone(), gamma, ChannelKind::HermitianDephasing)
}

/// `ρ ↦ γ(LρL† − ½{L†L, ρ})`.
pub fn relaxation_generator(l: &Operator, gamma: f64) -> Result<LindbladChannel> {
    LindbladChannel::new(l.clone(), gamma, ChannelKind::Relaxation)
}

/// Diagonalizes the rate matrix `Γ_ab` of correlated dephasing into
/// independent channels `L_ν = Σ_a u_aν K_a` with rates `λ_ν(Γ)`.
///
/// The dissipator is `Σ_ab Γ_ab (K_a ρ K_b − ½{K_b K_a, ρ})`, which for
/// real `Γ` equals `−½ Σ_ab Γ_ab [K_a,[K_b,ρ]]`.
pub fn correlated_dephasing_channels(ks: &[Operator], gamma: &CorrelationMatrix) -> Result<Vec<LindbladChannel>> {
    if ks.len() != gamma.dim() {
        return Err(Error::Shape(format!("{} currents for a {}x{} rate matrix", ks.len(), gamma.dim(), gamma.dim())));
    }
    if let Some(k) = ks.iter().find(|k| !k.is_hermitian(1e-12)) {
        return Err(Error::Validity(format!("currents must be Hermitian (defect {:e})", k.hermiticity_defect())));
    }
    collective_currents(ks, gamma, 1.0)?
        .into_iter()
        .map(|cc| {
            let real = cc.coefficients.iter().all(|u| u.im.abs() < 1e-14);
            let kind = if real { ChannelKind::HermitianDephasing } else { ChannelKind::Relaxation };
            let op = if real {
                Operator::new(linalg::hermitian_part(cc.operator.matrix()))?
            } else {
                cc.operator
            };
            LindbladChannel::new(op, cc.eigenvalue, kind)
        })
        .collect()
}

fn check_dims(h0: &Operator, channels: &[LindbladChannel]) -> Result<usize> {
    let d = h0.dim();
    if let Some(ch) = channels.iter().find(|ch| ch.dim() != d) {
        return Err(Error::Shape(format!("channel dimension {} differs from H0 dimension {d}", ch.dim())));
    }
    Ok(d)
}

/// Right-hand side `−i[H₀,ρ] + Σ_channels`.
pub fn master_rhs(h0: &CMatrix, channels: &[LindbladChannel], rho: &CMatrix) -> CMatrix {
    let mut out = (h0 * rho - rho * h0) * c(0.0, -1.0);
    for ch in channels {
        out += ch.apply(rho);
    }
    out
}

fn rk4_step(h0: &CMatrix, channels: &[LindbladChannel], rho: &CMatrix, dt: f64) -> CMatrix {
    let half = c(0.5 * dt, 0.0);
    let k1 = master_rhs(h0, channels, rho);
    let k2 = master_rhs(h0, channels, &(rho + &k1 * half));
    let k3 = master_rhs(h0, channels, &(rho + &k2 * half));
    let k4 = master_rhs(h0, channels, &(rho + &k3 * c(dt, 0.0)));
    let next = rho + (k1 + (k2 + k3) * c(2.0, 0.0) + k4) * c(dt / 6.0, 0.0);
    let herm = linalg::hermitian_part(&next);
    let tr = herm.trace().re;
    herm / c(tr, 0.0)
}

fn rk4_run(h0: &CMatrix, channels: &[LindbladChannel], rho0: &CMatrix, dt: f64, n_steps: usize, record: &[usize]) -> Vec<CMatrix> {
    let mut rho = rho0.clone();
    let mut out = Vec::with_capacity(record.len());
    let mut next = 0;
    for step in 0..=n_steps {
        if record.get(next) == Some(&step) {
            out.push(rho.clone());
            next += 1;
        }
        if step < n_steps {
            rho = rk4_step(h0, channels, &rho, dt);
        }
    }
    out
}

/// Largest allowed divergence between the `dt` and `dt/2` solutions.
pub const HALVING_TOL: f64 = 1e-6;

/// Fixed-step RK4 solution recorded on the grid's record steps.
///
/// The run is repeated with half the step; a final-state difference above
/// [`HALVING_TOL`] is reported as an accuracy error.
pub fn propagate_master(
    h0: &Operator,
    channels: &[LindbladChannel],
    rho0: &DensityMatrix,
    grid: &SimulationGrid,
) -> Result<Vec<DensityMatrix>> {
    let d = check_dims(h0, channels)?;
    if rho0.dim() != d {
        return Err(Error::Shape(format!("initial state dimension {} differs from H0 dimension {d}", rho0.dim())));
    }
    let n = grid.n_steps();
    let record = grid.record_steps();
    let states = rk4_run(h0.matrix(), channels, rho0.matrix(), grid.dt, n, &record);
    let fine = rk4_run(h0.matrix(), channels, rho0.matrix(), grid.dt / 2.0, 2 * n, &[2 * n]);
    let last = states.last().expect("final step is always recorded");
    let divergence = linalg::max_abs_diff(last, &fine[0]);
    if !(divergence <= HALVING_TOL) {
        return Err(Error::Accuracy(format!(
            "step-halving check failed: final states differ by {divergence:e} (dt = {})",
            grid.dt
        )));
    }
    Ok(states.into_iter().map(DensityMatrix::from_raw).collect())
}

/// Default cap on the number of Liouvillian entries (`d⁴`).
pub const DEFAULT_ENTRY_CAP: usize = 1_000_000;

/// Superoperator in the column-stacking convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Liouvillian {
    matrix: CMatrix,
    hilbert_dim: usize,
}

impl Liouvillian {
    pub fn from_matrix(matrix: CMatrix) -> Result<Self> {
        let n = matrix.nrows();
        let d = (n as f64).sqrt().round() as usize;
        if n != matrix.ncols() || d * d != n {
            return Err(Error::Shape(format!("Liouvillian must be d²×d², got {}x{}", n, matrix.ncols())));
        }
        Ok(Self { matrix, hilbert_dim: d })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn hilbert_dim(&self) -> usize {
        self.hilbert_dim
    }

    pub fn frobenius_norm(&self) -> f64 {
        linalg::frobenius_norm(&self.matrix)
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        linalg::unvec_col(&(&self.matrix * linalg::vec_col(rho)), self.hilbert_dim)
    }
}

pub fn build_liouvillian(h0: &Operator, channels: &[LindbladChannel]) -> Result<Liouvillian> {
    build_liouvillian_with_cap(h0, channels, DEFAULT_ENTRY_CAP)
}

pub fn build_liouvillian_with_cap(h0: &Operator, channels: &[LindbladChannel], cap: usize) -> Result<Liouvillian> {
    let d = check_dims(h0, channels)?;
    let entries = d.saturating_mul(d).saturating_mul(d).saturating_mul(d);
    if entries > cap {
        return Err(Error::Size {
            what: "Liouvillian entries",
            value: entries,
            limit: cap,
        });
    }
    let id = linalg::identity(d);
    let h = h0.matrix();
    let mut m = (linalg::kron(&id, h) - linalg::kron(&h.transpose(), &id)) * c(0.0, -1.0);
    for ch in channels {
        let g = c(ch.rate, 0.0);
        let l = ch.jump.matrix();
        let lsq = &ch.jump_sq;
        let sandwich = linalg::kron(&l.map(|z| z.conj()), l);
        let anti = linalg::kron(&id, lsq) + linalg::kron(&lsq.transpose(), &id);
        m += (sandwich - anti * c(0.5, 0.0)) * g;
    }
    Ok(Liouvillian { matrix: m, hilbert_dim: d })
}

/// `‖𝓛𝓛† − 𝓛†𝓛‖_F / ‖𝓛‖_F²`, zero for the zero map.
pub fn normality_defect(l: &Liouvillian) -> f64 {
    let norm = l.frobenius_norm();
    if norm == 0.0 {
        return 0.0;
    }
    let a = l.matrix();
    let ad = a.adjoint();
    linalg::frobenius_norm(&(a * &ad - &ad * a)) / (norm * norm)
}

/// Eigen-structure of a Liouvillian.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Sorted by decreasing real part, then increasing imaginary part.
    pub eigenvalues: Vec<C64>,
    pub right_eigenvectors: CMatrix,
    /// `κ_i ≥ 1`; for clusters of coincident eigenvalues the norm of the
    /// spectral projector of the cluster.
    pub condition_numbers: Vec<f64>,
    /// Smallest `|λ_i − λ_j|`, infinite for a single eigenvalue.
    pub min_pair_gap: f64,
    pub normality_defect: f64,
    pub frobenius_norm: f64,
}

/// JSON view of a [`SpectralReport`] with eigenvalues as `[re, im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub eigenvalues: Vec<[f64; 2]>,
    pub condition_numbers: Vec<f64>,
    pub max_condition_number: f64,
    pub min_pair_gap: f64,
    pub normality_defect: f64,
    pub frobenius_norm: f64,
}

impl SpectralReport {
    pub fn max_condition(&self) -> f64 {
        self.condition_numbers.iter().copied().fold(1.0, f64::max)
    }

    pub fn max_real_part(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_imag(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    pub fn summary(&self) -> SpectralSummary {
        SpectralSummary {
            eigenvalues: self.eigenvalues.iter().map(|z| [z.re, z.im]).collect(),
            condition_numbers: self.condition_numbers.clone(),
            max_condition_number: self.max_condition(),
            min_pair_gap: self.min_pair_gap,
            normality_defect: self.normality_defect,
            frobenius_norm: self.frobenius_norm,
        }
    }
}

/// Absolute distance below which eigenvalues count as one cluster,
/// relative to `max(1, ‖𝓛‖_F)`.
pub const CLUSTER_TOL: f64 = 1e-12;

pub fn spectral_report(l: &Liouvillian) -> Result<SpectralReport> {
    let a = l.matrix();
    let n = a.nrows();
    let eig = linalg::general_eigen(a)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (x, y) = (eig.values[i], eig.values[j]);
        y.re.total_cmp(&x.re).then(x.im.total_cmp(&y.im))
    });
    let values: Vec<C64> = order.iter().map(|&k| eig.values[k]).collect();
    let mut right = CMatrix::zeros(n, n);
    let mut left = CMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        right.set_column(col, &eig.right.column(k));
        left.set_column(col, &eig.left.column(k));
    }
    let norm = l.frobenius_norm();
    let mut kappa: Vec<f64> = (0..n)
        .map(|k| {
            let overlap = left.column(k).dotc(&right.column(k)).norm();
            if overlap > 0.0 { (1.0 / overlap).max(1.0) } else { f64::INFINITY }
        })
        .collect();
    for cluster in linalg::cluster_eigenvalues(&values, CLUSTER_TOL * norm.max(1.0)) {
        if cluster.len() < 2 {
            continue;
        }
        let center = cluster.iter().map(|&i| values[i]).sum::<C64>() / c(cluster.len() as f64, 0.0);
        let projector = linalg::cluster_condition(a, center, cluster.len())?;
        let mut block = CMatrix::zeros(n, cluster.len());
        for (col, &i) in cluster.iter().enumerate() {
            block.set_column(col, &right.column(i));
        }
        let smin = linalg::singular_values(&block)?.into_iter().fold(f64::INFINITY, f64::min);
        // a rank-deficient eigenvector block means the cluster is defective
        let defective = smin < f64::EPSILON.sqrt();
        for &i in &cluster {
            kappa[i] = if defective { kappa[i].max(projector) } else { projector };
        }
    }
    let mut gap = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            gap = gap.min((values[i] - values[j]).norm());
        }
    }
    Ok(SpectralReport {
        eigenvalues: values,
        right_eigenvectors: right,
        condition_numbers: kappa,
        min_pair_gap: gap,
        normality_defect: normality_defect(l),
        frobenius_norm: norm,
    })
}

/// Thresholds of the exceptional-point heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpOptions {
    /// Gap threshold relative to `‖𝓛‖_F`.
    pub gap_tol_rel: f64,
    pub kappa_tol: f64,
    pub refine_rounds: usize,
}

impl Default for EpOptions {
    fn default() -> Self {
        Self {
            gap_tol_rel: 1e-3,
            kappa_tol: 1e3,
            refine_rounds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: f64,
    pub min_pair_gap: f64,
    pub max_condition_number: f64,
    pub normality_defect: f64,
    pub frobenius_norm: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpCandidate {
    /// Parameter of the largest condition number found.
    pub parameter: f64,
    pub max_condition_number: f64,
    pub min_pair_gap: f64,
    /// Final bracket of the refinement.
    pub bracket: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpScan {
    pub points: Vec<SweepPoint>,
    pub candidates: Vec<EpCandidate>,
}

fn evaluate<F>(family: &F, p: f64, opts: &EpOptions) -> Result<SweepPoint>
where
    F: Fn(f64) -> Result<Liouvillian>,
{
    let l = family(p)?;
    let rep = spectral_report(&l)?;
    let max_kappa = rep.max_condition();
    Ok(SweepPoint {
        parameter: p,
        min_pair_gap: rep.min_pair_gap,
        max_condition_number: max_kappa,
        normality_defect: rep.normality_defect,
        frobenius_norm: rep.frobenius_norm,
        flagged: rep.min_pair_gap < opts.gap_tol_rel * rep.frobenius_norm && max_kappa > opts.kappa_tol,
    })
}

/// Flags sweep points whose spectrum has both a small gap and a large
/// condition number, then refines each contiguous flagged run around its
/// largest `κ` by bisection.
pub fn detect_ep<F>(family: F, sweep: &[f64], opts: EpOptions) -> Result<EpScan>
where
    F: Fn(f64) -> Result<Liouvillian>,
{
    if sweep.is_empty() {
        return Err(Error::Parameter("EP sweep grid is empty".into()));
    }
    if sweep.iter().any(|p| !p.is_finite()) {
        return Err(Error::Parameter("EP sweep grid has non-finite values".into()));
    }
    let points = sweep.iter().map(|&p| evaluate(&family, p, &opts)).collect::<Result<Vec<_>>>()?;
    let mut candidates = Vec::new();
    let mut i = 0;
    while i < points.len() {
        if !points[i].flagged {
            i += 1;
            continue;
        }
        let start = i;
        while i < points.len() && points[i].flagged {
            i += 1;
        }
        let seed = (start..i)
            .max_by(|&a, &b| points[a].max_condition_number.total_cmp(&points[b].max_condition_number))
            .expect("nonempty run");
        let mut best = points[seed].clone();
        let mut min_gap = (start..i).map(|k| points[k].min_pair_gap).fold(f64::INFINITY, f64::min);
        let mut lo = if seed > 0 { points[seed - 1].parameter } else { best.parameter };
        let mut hi = if seed + 1 < points.len() { points[seed + 1].parameter } else { best.parameter };
        if points.len() > 1 {
            for _ in 0..opts.refine_rounds {
                let centre = best.parameter;
                let left = (lo < centre).then_some(0.5 * (lo + centre));
                let right = (hi > centre).then_some(0.5 * (hi + centre));
                for p in [left, right].into_iter().flatten() {
                    let t = evaluate(&family, p, &opts)?;
                    min_gap = min_gap.min(t.min_pair_gap);
                    if t.max_condition_number > best.max_condition_number {
                        best = t;
                    }
                }
                if best.parameter < centre {
                    hi = centre;
                } else if best.parameter > centre {
                    lo = centre;
                } else {
                    lo = left.unwrap_or(lo);
                    hi = right.unwrap_or(hi);
                }
            }
        }
        candidates.push(EpCandidate {
            parameter: best.parameter,
            max_condition_number: best.max_condition_number,
            min_pair_gap: min_gap.min(best.min_pair_gap),
            bracket: [lo.min(hi), lo.max(hi)],
        });
    }
    Ok(EpScan { points, candidates })
}

/// Returns the collective currents of `D` whose eigenvalue vanishes.
pub fn dfs_kernel(d: &CorrelationMatrix, ks: &[Operator]) -> Result<Vec<CollectiveCurrent>> {
    const KERNEL_TOL: f64 = 1e-10;
    let (raw, _) = linalg::hermitian_eigen(d.entries());
    Ok(collective_currents(ks, d, 1.0)?
        .into_iter()
        .zip(raw)
        .filter(|(_, lambda)| *lambda < KERNEL_TOL)
        .map(|(mut cc, _)| {
            cc.rate = 0.0;
            cc.eigenvalue = 0.0;
            cc
        })
        .collect())
}

/// Which parameter of the collective-loss model is swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSweep {
    /// Noise correlation `ξ ∈ [−1, 1]` at fixed loss rate.
    Xi,
    /// Loss-to-coupling ratio `γ/J` at fixed `ξ`.
    LossRatio,
}

/// Two hardcore sites coupled by `J(a₀†a₁ + h.c.)` with collective losses
/// `L_± = ½√(1±ξ)(a₀ ± a₁)` at rate `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectiveLossModel {
    pub coupling: f64,
    pub loss: f64,
    pub xi: f64,
    pub theta: f64,
}

impl CollectiveLossModel {
    pub fn operators(&self) -> Result<(Operator, Vec<LindbladChannel>)> {
        if !(self.xi.is_finite() && self.xi.abs() <= 1.0) {
            return Err(Error::Parameter(format!("ξ must lie in [−1, 1], got {}", self.xi)));
        }
        if !(self.coupling.is_finite() && self.loss.is_finite() && self.loss >= 0.0) {
            return Err(Error::Parameter("collective-loss model needs finite J and γ ≥ 0".into()));
        }
        let space = HilbertSpace::hardcore(2)?;
        let a = build_jw_anyon_ops(&space, StatisticalAngle::new(self.theta)?)?;
        let (a0, a1) = (a[0].matrix(), a[1].matrix());
        let hop = a0.adjoint() * a1;
        let h0 = Operator::new((&hop + hop.adjoint()) * c(self.coupling, 0.0))?;
        let mut channels = Vec::with_capacity(2);
        for sign in [1.0, -1.0] {
            let weight = 0.5 * (1.0 + sign * self.xi).max(0.0).sqrt();
            let jump = Operator::new((a0 + a1 * c(sign, 0.0)) * c(weight, 0.0))?;
            channels.push(relaxation_generator(&jump, self.loss)?);
        }
        Ok((h0, channels))
    }

    pub fn liouvillian(&self) -> Result<Liouvillian> {
        let (h0, channels) = self.operators()?;
        build_liouvillian(&h0, &channels)
    }

    /// The model with the swept parameter set to `p`.
    pub fn at(&self, sweep: LossSweep, p: f64) -> Self {
        match sweep {
            LossSweep::Xi => Self { xi: p, ..*self },
            LossSweep::LossRatio => Self {
                loss: p * self.coupling,
                ..*self
            },
        }
    }
}

/// Two links on the two-mode manifold with currents `K_{θ+δ_a}`, `H₀ = 0`
/// and correlation `[[1, ξ], [ξ, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLinkDephasingModel {
    pub coupling: f64,
    pub d_phi: f64,
    pub theta: f64,
    pub offsets: [f64; 2],
    pub xi: f64,
}

impl TwoLinkDephasingModel {
    pub fn currents(&self) -> Result<Vec<Operator>> {
        self.offsets
            .iter()
            .map(|&off| Ok(two_mode_k(StatisticalAngle::new(self.theta + off)?)))
            .collect()
    }

    pub fn rate_matrix(&self) -> Result<CorrelationMatrix> {
        let d = CorrelationMatrix::two_link(self.xi)?;
        let scaled = CorrelationMatrix::from_complex(d.entries() * c(self.d_phi, 0.0))?;
        noise::rate_matrix(&[self.coupling, self.coupling], &scaled)
    }

    pub fn channels(&self) -> Result<Vec<LindbladChannel>> {
        correlated_dephasing_channels(&self.currents()?, &self.rate_matrix()?)
    }

    pub fn liouvillian(&self) -> Result<Liouvillian> {
        build_liouvillian(&Operator::zeros(2), &self.channels()?)
    }
}
