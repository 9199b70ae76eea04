//! Stochastic Liouville trajectories and their ensemble averages.
//!
//! A single realization obeys
//! `dρ = −i[H₀,ρ]dt − i Σ_a J_a [K_a, ρ] ∘ dφ_a` (Stratonovich). The Itô
//! form adds the drift `−½ Σ_ab Γ_ab [K_a,[K_b,ρ]] dt` with
//! `Γ_ab = 2 J_a J_b D_ab`; averaging either one over the noise gives the
//! Lindblad equation solved in [`crate::lindblad`].

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::Operator;
use crate::linalg::{self, c};
use crate::noise::{self, CorrelationMatrix, IncrementSampler, NoiseSpec, OuProcess, RngStream};
use crate::{CMatrix, Error, Result, C64};

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;

/// Hermitian, unit-trace, positive semidefinite state.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Shape(format!(
                "density matrix must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let herm = linalg::hermiticity_defect(&matrix);
        if !(herm <= HERMITIAN_TOL) {
            return Err(Error::Validity(format!("density matrix not Hermitian (defect {herm:e})")));
        }
        let tr = matrix.trace();
        if !((tr - c(1.0, 0.0)).norm() <= TRACE_TOL) {
            return Err(Error::Validity(format!("density matrix trace is {tr}")));
        }
        let min = linalg::min_eigenvalue(&matrix);
        if min < -POSITIVITY_TOL {
            return Err(Error::Validity(format!(
                "density matrix not positive (min eigenvalue {min:e})"
            )));
        }
        Ok(Self { matrix })
    }

    /// Wraps a matrix without checks. Used for trajectory snapshots, which
    /// need not be positive under Euler–Maruyama.
    pub(crate) fn from_raw(matrix: CMatrix) -> Self {
        Self { matrix }
    }

    /// `|ψ⟩⟨ψ|` for the normalized `psi`.
    pub fn pure(psi: &DVector<C64>) -> Result<Self> {
        let norm = psi.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Validity("state vector has zero or non-finite norm".into()));
        }
        let v = psi / c(norm, 0.0);
        Self::new(&v * v.adjoint())
    }

    /// Qubit state `½(I + r·σ)`.
    pub fn from_bloch(r: [f64; 3]) -> Result<Self> {
        let len = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        if len > 1.0 + 1e-12 {
            return Err(Error::Validity(format!("Bloch vector length {len} exceeds 1")));
        }
        let m = (linalg::identity(2)
            + linalg::pauli_x() * c(r[0], 0.0)
            + linalg::pauli_y() * c(r[1], 0.0)
            + linalg::pauli_z() * c(r[2], 0.0))
            * c(0.5, 0.0);
        Self::new(m)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: linalg::identity(dim) * c(1.0 / dim as f64, 0.0),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn expectation(&self, op: &CMatrix) -> f64 {
        (&self.matrix * op).trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.matrix)
    }

    /// Bloch vector of a qubit state.
    pub fn bloch(&self) -> Option<[f64; 3]> {
        (self.dim() == 2).then(|| {
            [
                self.expectation(&linalg::pauli_x()),
                self.expectation(&linalg::pauli_y()),
                self.expectation(&linalg::pauli_z()),
            ]
        })
    }
}

/// Fixed time grid with a recording stride.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationGrid {
    pub t_final: f64,
    pub dt: f64,
    pub record_stride: usize,
}

/// At most this many snapshots when the stride is chosen automatically.
pub const DEFAULT_MAX_RECORDS: usize = 1000;

impl SimulationGrid {
    pub fn new(t_final: f64, dt: f64, record_stride: Option<usize>) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0 && dt.is_finite() && dt > 0.0) {
            return Err(Error::Parameter(format!(
                "grid needs t_final > 0 and dt > 0 (got {t_final}, {dt})"
            )));
        }
        if dt > t_final {
            return Err(Error::Parameter(format!("dt {dt} exceeds t_final {t_final}")));
        }
        let n_steps = Self::count_steps(t_final, dt);
        let record_stride = match record_stride {
            Some(0) => return Err(Error::Parameter("record_stride must be positive".into())),
            Some(s) => s,
            None => n_steps.div_ceil(DEFAULT_MAX_RECORDS),
        };
        Ok(Self {
            t_final,
            dt,
            record_stride,
        })
    }

    fn count_steps(t_final: f64, dt: f64) -> usize {
        // absorb representation error in t_final/dt before rounding up
        let ratio = t_final / dt;
        let n = (ratio * (1.0 - 4.0 * f64::EPSILON)).ceil();
        (n as usize).max(1)
    }

    pub fn n_steps(&self) -> usize {
        Self::count_steps(self.t_final, self.dt)
    }

    /// Step indices at which the state is recorded (always includes 0 and
    /// the final step).
    pub fn record_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut steps: Vec<usize> = (0..=n).step_by(self.record_stride).collect();
        if steps.last() != Some(&n) {
            steps.push(n);
        }
        steps
    }

    pub fn times(&self) -> Vec<f64> {
        self.record_steps().iter().map(|&s| s as f64 * self.dt).collect()
    }
}

/// Hamiltonian part and noise couplings of a stochastic Liouville equation.
#[derive(Debug, Clone)]
pub struct Drive {
    pub h0: CMatrix,
    pub currents: Vec<CMatrix>,
    pub amplitudes: Vec<f64>,
    /// Itô drift rates `Γ_ab`.
    pub rates: CMatrix,
    /// `Γ = Σ_ν λ_ν u_ν u_ν†` folded into `L_ν = Σ_a u_aν K_a`, so the drift
    /// is `−½ Σ_ν λ_ν [L_ν,[L_ν†,ρ]]`.
    drift: Vec<(f64, CMatrix, CMatrix)>,
}

impl Drive {
    /// Builds the drive for currents `K_a`, amplitudes `J_a` and the total
    /// increment covariance `⟨dφ_a dφ_b⟩ = 2 D_ab dt`.
    pub fn new(h0: &Operator, currents: &[Operator], amplitudes: &[f64], d: &CorrelationMatrix) -> Result<Self> {
        let dim = h0.dim();
        if currents.len() != amplitudes.len() || currents.len() != d.dim() {
            return Err(Error::Shape(format!(
                "{} currents, {} amplitudes, {}x{} correlation matrix",
                currents.len(),
                amplitudes.len(),
                d.dim(),
                d.dim()
            )));
        }
        if currents.iter().any(|k| k.dim() != dim) {
            return Err(Error::Shape("current dimension differs from H0".into()));
        }
        if let Some(k) = currents.iter().find(|k| !k.is_hermitian(1e-12)) {
            return Err(Error::Validity(format!(
                "exchange currents must be Hermitian (defect {:e})",
                k.hermiticity_defect()
            )));
        }
        let rates = noise::rate_matrix(amplitudes, d)?;
        let (values, vectors) = rates.eigen();
        let drift = values
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0.0)
            .map(|(nu, &l)| {
                let op = currents
                    .iter()
                    .enumerate()
                    .fold(CMatrix::zeros(dim, dim), |acc, (a, k)| acc + k.matrix() * vectors[(a, nu)]);
                let adj = op.adjoint();
                (l, op, adj)
            })
            .collect();
        Ok(Self {
            h0: h0.matrix().clone(),
            currents: currents.iter().map(|k| k.matrix().clone()).collect(),
            amplitudes: amplitudes.to_vec(),
            rates: rates.entries().clone(),
            drift,
        })
    }

    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }

    pub fn n_links(&self) -> usize {
        self.currents.len()
    }

    /// Generator `H₀ dt + Σ_a J_a dφ_a K_a` of one step.
    pub fn step_generator(&self, dphi: &[f64], dt: f64) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim(), self.dim());
        self.generator_into(m.as_mut_slice(), dphi, dt);
        m
    }

    fn generator_into(&self, out: &mut [C64], dphi: &[f64], dt: f64) {
        for (o, h) in out.iter_mut().zip(self.h0.as_slice()) {
            *o = h * dt;
        }
        for ((k, &j), &d) in self.currents.iter().zip(&self.amplitudes).zip(dphi) {
            let s = j * d;
            if s != 0.0 {
                for (o, x) in out.iter_mut().zip(k.as_slice()) {
                    *o += x * s;
                }
            }
        }
    }
}

/// Scratch buffers for allocation-free steps on column-major `n×n` data.
#[derive(Debug, Clone)]
pub struct StepWorkspace {
    n: usize,
    m: Vec<C64>,
    a: Vec<C64>,
    b: Vec<C64>,
    c: Vec<C64>,
    d: Vec<C64>,
}

impl StepWorkspace {
    pub fn new(n: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); n * n];
        Self {
            n,
            m: z.clone(),
            a: z.clone(),
            b: z.clone(),
            c: z.clone(),
            d: z,
        }
    }
}

/// `out = s · (x y − y x)`.
#[inline]
fn commutator_into(out: &mut [C64], x: &[C64], y: &[C64], n: usize, s: C64) {
    for j in 0..n {
        for i in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += x[i + k * n] * y[k + j * n] - y[i + k * n] * x[k + j * n];
            }
            out[i + j * n] = acc * s;
        }
    }
}

const MINUS_I: C64 = C64::new(0.0, -1.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// In-place Heun update of column-major `rho`.
pub fn heun_in_place(rho: &mut [C64], drive: &Drive, dphi: &[f64], dt: f64, ws: &mut StepWorkspace) {
    let n = ws.n;
    drive.generator_into(&mut ws.m, dphi, dt);
    commutator_into(&mut ws.a, &ws.m, rho, n, MINUS_I);
    for ((p, r), g) in ws.b.iter_mut().zip(rho.iter()).zip(&ws.a) {
        *p = r + g;
    }
    commutator_into(&mut ws.c, &ws.m, &ws.b, n, MINUS_I);
    for ((r, g0), g1) in rho.iter_mut().zip(&ws.a).zip(&ws.c) {
        *r += (g0 + g1) * 0.5;
    }
}

/// In-place Euler–Maruyama update of column-major `rho`.
pub fn euler_maruyama_in_place(rho: &mut [C64], drive: &Drive, dphi: &[f64], dt: f64, ws: &mut StepWorkspace) {
    let n = ws.n;
    drive.generator_into(&mut ws.m, dphi, dt);
    commutator_into(&mut ws.d, &ws.m, rho, n, MINUS_I);
    for (rate, op, adj) in &drive.drift {
        commutator_into(&mut ws.a, adj.as_slice(), rho, n, ONE);
        commutator_into(&mut ws.b, op.as_slice(), &ws.a, n, ONE);
        let s = -0.5 * dt * rate;
        for (acc, x) in ws.d.iter_mut().zip(&ws.b) {
            *acc += x * s;
        }
    }
    for (r, x) in rho.iter_mut().zip(&ws.d) {
        *r += x;
    }
}

/// Hermitian symmetrization followed by trace normalization, in place.
pub fn finalize_in_place(rho: &mut [C64], n: usize) {
    let mut tr = 0.0;
    for i in 0..n {
        let d = rho[i + i * n].re;
        rho[i + i * n] = C64::new(d, 0.0);
        tr += d;
        for j in i + 1..n {
            let avg = (rho[i + j * n] + rho[j + i * n].conj()) * 0.5;
            rho[i + j * n] = avg;
            rho[j + i * n] = avg.conj();
        }
    }
    let inv = 1.0 / tr;
    for r in rho.iter_mut() {
        *r *= inv;
    }
}

/// One Heun (predictor–corrector) update of the Stratonovich equation,
/// without renormalization.
pub fn heun_update(rho: &CMatrix, drive: &Drive, dphi: &[f64], dt: f64) -> CMatrix {
    let mut out = rho.clone();
    heun_in_place(out.as_mut_slice(), drive, dphi, dt, &mut StepWorkspace::new(rho.nrows()));
    out
}

/// One Euler–Maruyama update of the Itô equation, without renormalization.
pub fn euler_maruyama_update(rho: &CMatrix, drive: &Drive, dphi: &[f64], dt: f64) -> CMatrix {
    let mut out = rho.clone();
    euler_maruyama_in_place(out.as_mut_slice(), drive, dphi, dt, &mut StepWorkspace::new(rho.nrows()));
    out
}

/// Exact unitary `U ρ U†` with `U = exp(−i(H₀dt + Σ J_a dφ_a K_a))`.
pub fn exact_unitary_update(rho: &CMatrix, drive: &Drive, dphi: &[f64], dt: f64) -> CMatrix {
    let u = linalg::expm(&(drive.step_generator(dphi, dt) * c(0.0, -1.0)));
    &u * rho * u.adjoint()
}

fn finalize(mut rho: CMatrix) -> CMatrix {
    let n = rho.nrows();
    finalize_in_place(rho.as_mut_slice(), n);
    rho
}

fn checked(rho: CMatrix, tol: f64) -> Result<DensityMatrix> {
    if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numeric("state became non-finite".into()));
    }
    let min = linalg::min_eigenvalue(&rho);
    if min < -tol {
        return Err(Error::Positivity {
            step: 0,
            min_eigenvalue: min,
        });
    }
    Ok(DensityMatrix::from_raw(rho))
}

/// Heun step of the Stratonovich equation followed by Hermitian
/// symmetrization and trace renormalization.
pub fn stratonovich_step(rho: &DensityMatrix, drive: &Drive, dphi: &[f64], dt: f64) -> Result<DensityMatrix> {
    check_step_shapes(rho, drive, dphi)?;
    checked(finalize(heun_update(rho.matrix(), drive, dphi, dt)), POSITIVITY_TOL)
}

/// Euler–Maruyama step of the Itô equation with the double-commutator drift.
pub fn ito_step(rho: &DensityMatrix, drive: &Drive, dphi: &[f64], dt: f64) -> Result<DensityMatrix> {
    check_step_shapes(rho, drive, dphi)?;
    checked(finalize(euler_maruyama_update(rho.matrix(), drive, dphi, dt)), POSITIVITY_TOL)
}

fn check_step_shapes(rho: &DensityMatrix, drive: &Drive, dphi: &[f64]) -> Result<()> {
    if rho.dim() != drive.dim() {
        return Err(Error::Shape(format!("state dim {} vs drive dim {}", rho.dim(), drive.dim())));
    }
    if dphi.len() != drive.n_links() {
        return Err(Error::Shape(format!("{} increments for {} links", dphi.len(), drive.n_links())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Heun integration of the Stratonovich equation.
    Stratonovich,
    /// Euler–Maruyama integration of the Itô equation.
    Ito,
    /// Exact per-step unitary of the linearized coupling.
    ExactUnitary,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Stratonovich => "stratonovich",
            Scheme::Ito => "ito",
            Scheme::ExactUnitary => "exact_unitary",
        }
    }
}

/// Per-step positivity check applied along trajectories.
///
/// Heun and Euler–Maruyama do not preserve positivity of individual
/// realizations at finite `dt`, so the default only rejects non-finite states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode", content = "tolerance")]
pub enum PositivityGuard {
    #[default]
    FiniteOnly,
    Strict(f64),
}

/// Everything needed to run one trajectory.
#[derive(Debug, Clone)]
pub struct StochasticModel {
    pub drive: Drive,
    pub noise: NoiseSpec,
    /// Link correlation structure; the increment covariance is
    /// `2 · diffusion_constant(noise) · D · dt`.
    pub correlation: CorrelationMatrix,
    pub rho0: DensityMatrix,
    pub grid: SimulationGrid,
    pub guard: PositivityGuard,
}

impl StochasticModel {
    pub fn new(
        h0: &Operator,
        currents: &[Operator],
        amplitudes: &[f64],
        noise: NoiseSpec,
        correlation: CorrelationMatrix,
        rho0: DensityMatrix,
        grid: SimulationGrid,
    ) -> Result<Self> {
        noise.validate()?;
        if !correlation.is_classical() {
            return Err(Error::Validity("trajectories need a real correlation matrix".into()));
        }
        let scaled = scale_correlation(&correlation, noise.diffusion_constant())?;
        let drive = Drive::new(h0, currents, amplitudes, &scaled)?;
        if rho0.dim() != drive.dim() {
            return Err(Error::Shape("initial state dimension differs from H0".into()));
        }
        Ok(Self {
            drive,
            noise,
            correlation,
            rho0,
            grid,
            guard: PositivityGuard::default(),
        })
    }

    pub fn with_guard(mut self, guard: PositivityGuard) -> Self {
        self.guard = guard;
        self
    }

    /// `Γ_ab` of the equivalent master equation.
    pub fn rate_matrix(&self) -> &CMatrix {
        &self.drive.rates
    }

    fn is_noiseless(&self) -> bool {
        self.noise.diffusion_constant() == 0.0 || self.drive.amplitudes.iter().all(|&j| j == 0.0)
    }
}

fn scale_correlation(d: &CorrelationMatrix, s: f64) -> Result<CorrelationMatrix> {
    CorrelationMatrix::from_complex(d.entries() * c(s, 0.0))
}

enum NoiseSource {
    White(IncrementSampler),
    Colored {
        factor: nalgebra::DMatrix<f64>,
        processes: Vec<OuProcess>,
        rng: rand_chacha::ChaCha20Rng,
        previous: Vec<f64>,
        dt: f64,
    },
    Silent,
}

impl NoiseSource {
    fn new(model: &StochasticModel, stream: RngStream) -> Result<Self> {
        let dt = model.grid.dt;
        if model.is_noiseless() {
            return Ok(NoiseSource::Silent);
        }
        match model.noise {
            NoiseSpec::Wiener { .. } | NoiseSpec::QuantumBath { .. } => {
                let d = scale_correlation(&model.correlation, model.noise.diffusion_constant())?;
                Ok(NoiseSource::White(IncrementSampler::new(&d, dt, stream)?))
            }
            NoiseSpec::OrnsteinUhlenbeck { sigma, tau_c } => {
                // ξ = F η with F Fᵀ = D and η independent unit-correlation OU paths
                let factor = noise::increment_factor(&model.correlation, 0.5)?;
                let mut rng = stream.rng();
                let processes = (0..factor.ncols())
                    .map(|_| OuProcess::new(sigma, tau_c, dt, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                let previous = mix(&factor, &processes);
                Ok(NoiseSource::Colored {
                    factor,
                    processes,
                    rng,
                    previous,
                    dt,
                })
            }
        }
    }

    fn next_into(&mut self, out: &mut [f64]) {
        match self {
            NoiseSource::White(s) => s.next_into(out),
            NoiseSource::Colored {
                factor,
                processes,
                rng,
                previous,
                dt,
            } => {
                advance_all(processes, rng);
                let now = mix(factor, processes);
                for (a, o) in out.iter_mut().enumerate() {
                    *o = 0.5 * (previous[a] + now[a]) * *dt;
                }
                *previous = now;
            }
            NoiseSource::Silent => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }
}

fn advance_all<R: Rng>(processes: &mut [OuProcess], rng: &mut R) {
    for p in processes {
        p.advance(rng);
    }
}

fn mix(factor: &nalgebra::DMatrix<f64>, processes: &[OuProcess]) -> Vec<f64> {
    (0..factor.nrows())
        .map(|a| {
            processes
                .iter()
                .enumerate()
                .map(|(k, p)| factor[(a, k)] * p.value())
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryResult {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub stream_id: u64,
}

/// Integrates one realization. Deterministic for a given stream.
pub fn run_trajectory(model: &StochasticModel, stream: RngStream, scheme: Scheme) -> Result<TrajectoryResult> {
    run_trajectory_inner(model, stream, scheme).map_err(|e| Error::Trajectory {
        stream_id: stream.stream_id,
        source: Box::new(e),
    })
}

fn run_trajectory_inner(model: &StochasticModel, stream: RngStream, scheme: Scheme) -> Result<TrajectoryResult> {
    if scheme == Scheme::Ito && matches!(model.noise, NoiseSpec::OrnsteinUhlenbeck { .. }) {
        return Err(Error::Parameter(
            "colored noise is integrated in the Stratonovich sense; use the stratonovich or exact_unitary scheme".into(),
        ));
    }
    let grid = model.grid;
    let record = grid.record_steps();
    let mut source = NoiseSource::new(model, stream)?;
    let mut dphi = vec![0.0; model.drive.n_links()];
    let mut rho = model.rho0.matrix().clone();
    let n = rho.nrows();
    let mut ws = StepWorkspace::new(n);
    let mut states = Vec::with_capacity(record.len());
    let mut next_record = 0;
    for step in 0..=grid.n_steps() {
        if record.get(next_record) == Some(&step) {
            states.push(DensityMatrix::from_raw(rho.clone()));
            next_record += 1;
        }
        if step == grid.n_steps() {
            break;
        }
        source.next_into(&mut dphi);
        match scheme {
            Scheme::Stratonovich => heun_in_place(rho.as_mut_slice(), &model.drive, &dphi, grid.dt, &mut ws),
            Scheme::Ito => euler_maruyama_in_place(rho.as_mut_slice(), &model.drive, &dphi, grid.dt, &mut ws),
            Scheme::ExactUnitary => rho = exact_unitary_update(&rho, &model.drive, &dphi, grid.dt),
        }
        finalize_in_place(rho.as_mut_slice(), n);
        if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric(format!("state became non-finite at step {}", step + 1)));
        }
        if let PositivityGuard::Strict(tol) = model.guard {
            let min = linalg::min_eigenvalue(&rho);
            if min < -tol {
                return Err(Error::Positivity {
                    step: step + 1,
                    min_eigenvalue: min,
                });
            }
        }
    }
    Ok(TrajectoryResult {
        times: grid.times(),
        states,
        stream_id: stream.stream_id,
    })
}

/// Real observables tracked per recorded time: `Re ρ_ii`, then `Re ρ_ij`
/// and `Im ρ_ij` for `i < j`.
pub fn observable_names(dim: usize) -> Vec<String> {
    let mut names: Vec<String> = (0..dim).map(|i| format!("re_rho_{i}{i}")).collect();
    for i in 0..dim {
        for j in i + 1..dim {
            names.push(format!("re_rho_{i}{j}"));
            names.push(format!("im_rho_{i}{j}"));
        }
    }
    names
}

fn observables(rho: &CMatrix) -> Vec<f64> {
    let n = rho.nrows();
    let mut out: Vec<f64> = (0..n).map(|i| rho[(i, i)].re).collect();
    for i in 0..n {
        for j in i + 1..n {
            out.push(rho[(i, j)].re);
            out.push(rho[(i, j)].im);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub mean_states: Vec<DensityMatrix>,
    pub observable_names: Vec<String>,
    pub observable_means: Vec<Vec<f64>>,
    /// Standard error of each observable's mean, per recorded time.
    pub stderr_observables: Vec<Vec<f64>>,
    pub n_traj: usize,
    pub scheme: Scheme,
}

#[derive(Debug, Clone)]
struct Accumulator {
    count: usize,
    sums: Vec<CMatrix>,
    obs_sums: Vec<Vec<f64>>,
    obs_squares: Vec<Vec<f64>>,
    failures: Vec<(u64, Error)>,
}

impl Accumulator {
    fn empty() -> Self {
        Self {
            count: 0,
            sums: Vec::new(),
            obs_sums: Vec::new(),
            obs_squares: Vec::new(),
            failures: Vec::new(),
        }
    }

    fn from_trajectory(r: Result<TrajectoryResult>, stream_id: u64) -> Self {
        match r {
            Ok(t) => {
                let obs: Vec<Vec<f64>> = t.states.iter().map(|s| observables(s.matrix())).collect();
                Self {
                    count: 1,
                    obs_squares: obs.iter().map(|o| o.iter().map(|x| x * x).collect()).collect(),
                    obs_sums: obs,
                    sums: t.states.into_iter().map(DensityMatrix::into_matrix).collect(),
                    failures: Vec::new(),
                }
            }
            Err(e) => Self {
                failures: vec![(stream_id, e)],
                ..Self::empty()
            },
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.failures.extend(other.failures);
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return Self {
                failures: self.failures,
                ..other
            };
        }
        self.count += other.count;
        for (a, b) in self.sums.iter_mut().zip(other.sums) {
            *a += b;
        }
        for (a, b) in self.obs_sums.iter_mut().zip(other.obs_sums) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.obs_squares.iter_mut().zip(other.obs_squares) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self
    }
}

const LEAF_SIZE: u64 = 8;

fn reduce_range(model: &StochasticModel, seed: u64, scheme: Scheme, lo: u64, hi: u64) -> Accumulator {
    if hi - lo <= LEAF_SIZE {
        return (lo..hi).fold(Accumulator::empty(), |acc, id| {
            let r = run_trajectory(model, RngStream::new(seed, id), scheme);
            acc.merge(Accumulator::from_trajectory(r, id))
        });
    }
    let mid = lo + (hi - lo) / 2;
    let (left, right) = rayon::join(
        || reduce_range(model, seed, scheme, lo, mid),
        || reduce_range(model, seed, scheme, mid, hi),
    );
    left.merge(right)
}

/// Averages `n_traj` trajectories with stream ids `0..n_traj`.
///
/// The reduction is a fixed binary tree over trajectory indices, so the
/// result is bit-identical for any number of worker threads.
pub fn ensemble_average(model: &StochasticModel, n_traj: usize, master_seed: u64, scheme: Scheme) -> Result<EnsembleResult> {
    if n_traj < 2 {
        return Err(Error::Parameter(format!("ensemble needs at least 2 trajectories, got {n_traj}")));
    }
    let acc = reduce_range(model, master_seed, scheme, 0, n_traj as u64);
    if !acc.failures.is_empty() {
        let mut failures = acc.failures;
        failures.sort_by_key(|f| f.0);
        let ids = failures.iter().map(|f| f.0).collect();
        return Err(Error::Ensemble {
            failed: ids,
            first: Box::new(failures.swap_remove(0).1),
        });
    }
    let n = acc.count as f64;
    let mean_states = acc
        .sums
        .iter()
        .map(|s| DensityMatrix::from_raw(finalize(s / c(n, 0.0))))
        .collect();
    let observable_means: Vec<Vec<f64>> = acc.obs_sums.iter().map(|o| o.iter().map(|x| x / n).collect()).collect();
    let stderr_observables = observable_means
        .iter()
        .zip(&acc.obs_squares)
        .map(|(mean, sq)| {
            mean.iter()
                .zip(sq)
                .map(|(m, s)| {
                    let var = ((s / n - m * m) * n / (n - 1.0)).max(0.0);
                    (var / n).sqrt()
                })
                .collect()
        })
        .collect();
    Ok(EnsembleResult {
        times: model.grid.times(),
        mean_states,
        observable_names: observable_names(model.drive.dim()),
        observable_means,
        stderr_observables,
        n_traj,
        scheme,
    })
}

/// Runs [`ensemble_average`] on a dedicated pool of `workers` threads.
pub fn ensemble_average_with_workers(
    model: &StochasticModel,
    n_traj: usize,
    master_seed: u64,
    scheme: Scheme,
    workers: usize,
) -> Result<EnsembleResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("cannot build worker pool: {e}")))?;
    pool.install(|| ensemble_average(model, n_traj, master_seed, scheme))
}

/// Anything carrying a recorded sequence of states.
pub trait RecordedStates {
    fn recorded_states(&self) -> &[DensityMatrix];
}

impl RecordedStates for TrajectoryResult {
    fn recorded_states(&self) -> &[DensityMatrix] {
        &self.states
    }
}

impl RecordedStates for EnsembleResult {
    fn recorded_states(&self) -> &[DensityMatrix] {
        &self.mean_states
    }
}

impl RecordedStates for Vec<DensityMatrix> {
    fn recorded_states(&self) -> &[DensityMatrix] {
        self
    }
}

/// `s(t) = tr(ρ(t) ρ₀)` per recorded time.
pub fn survival_probability<R: RecordedStates + ?Sized>(result: &R, rho0: &DensityMatrix) -> Result<Vec<f64>> {
    result
        .recorded_states()
        .iter()
        .map(|s| {
            if s.dim() != rho0.dim() {
                return Err(Error::Shape("state and reference dimensions differ".into()));
            }
            Ok((s.matrix() * rho0.matrix()).trace().re)
        })
        .collect()
}
