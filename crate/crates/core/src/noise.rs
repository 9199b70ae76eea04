//! Phase-noise models: correlated Gaussian increments, Ornstein–Uhlenbeck
//! paths and the mapping from every noise description to a dephasing rate.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::quadrature::{self, QuadratureOptions};
use crate::{CMatrix, Error, Result, C64};

/// Eigenvalues in `[-PSD_TOL, 0)` are treated as zero; anything lower is an error.
pub const PSD_TOL: f64 = 1e-10;
const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BathFamily {
    #[default]
    Ohmic,
}

/// Ohmic spectrum `S_FF(ω) = η ω coth(ω/2T) e^{−|ω|/ω_c}` (ħ = k_B = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSpectrum {
    #[serde(default)]
    pub family: BathFamily,
    pub coupling: f64,
    pub temperature: f64,
    pub cutoff: f64,
}

impl BathSpectrum {
    pub fn ohmic(coupling: f64, temperature: f64, cutoff: f64) -> Result<Self> {
        let s = Self {
            family: BathFamily::Ohmic,
            coupling,
            temperature,
            cutoff,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.coupling.is_finite()
            && self.coupling >= 0.0
            && self.temperature.is_finite()
            && self.temperature >= 0.0
            && self.cutoff.is_finite()
            && self.cutoff > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "bath spectrum needs coupling ≥ 0, temperature ≥ 0, cutoff > 0 (got {self:?})"
            )))
        }
    }

    /// Symmetrized noise spectrum at frequency `omega`.
    pub fn symmetrized(&self, omega: f64) -> f64 {
        let w = omega.abs();
        let damp = (-w / self.cutoff).exp();
        if w == 0.0 {
            return 2.0 * self.coupling * self.temperature;
        }
        if self.temperature == 0.0 {
            return self.coupling * w * damp;
        }
        let x = w / (2.0 * self.temperature);
        self.coupling * w / x.tanh() * damp
    }

    /// Antisymmetric (dissipative) spectral function `χ''(ω) = η ω e^{−|ω|/ω_c}`.
    pub fn spectral_function(&self, omega: f64) -> f64 {
        self.coupling * omega * (-omega.abs() / self.cutoff).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// `dφ = √(2 D_φ) dW`.
    Wiener { d_phi: f64 },
    /// Stationary OU process with `C(τ) = σ² e^{−|τ|/τ_c}`.
    OrnsteinUhlenbeck { sigma: f64, tau_c: f64 },
    QuantumBath { spectrum: BathSpectrum },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Wiener { d_phi } if d_phi.is_finite() && d_phi >= 0.0 => Ok(()),
            NoiseSpec::Wiener { d_phi } => {
                Err(Error::Parameter(format!("d_phi must be finite and ≥ 0, got {d_phi}")))
            }
            NoiseSpec::OrnsteinUhlenbeck { sigma, tau_c } => {
                if sigma.is_finite() && sigma >= 0.0 && tau_c.is_finite() && tau_c > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!(
                        "OU noise needs sigma ≥ 0 and tau_c > 0 (got {sigma}, {tau_c})"
                    )))
                }
            }
            NoiseSpec::QuantumBath { spectrum } => spectrum.validate(),
        }
    }

    /// White-noise diffusion constant this spec is equivalent to.
    pub fn diffusion_constant(&self) -> f64 {
        match *self {
            NoiseSpec::Wiener { d_phi } => d_phi,
            NoiseSpec::OrnsteinUhlenbeck { sigma, tau_c } => sigma * sigma * tau_c,
            NoiseSpec::QuantumBath { spectrum } => ohmic_sff0(&spectrum),
        }
    }
}

/// `Γ_θ = 2J² × (D_φ | σ²τ_c | S_FF(0))`.
pub fn effective_rate(spec: &NoiseSpec, coupling: f64) -> f64 {
    2.0 * coupling * coupling * spec.diffusion_constant()
}

/// `lim_{ω→0} η ω coth(ω/2T) e^{−|ω|/ω_c} = 2ηT`.
pub fn ohmic_sff0(spectrum: &BathSpectrum) -> f64 {
    2.0 * spectrum.coupling * spectrum.temperature
}

/// Static susceptibility `Ξ = ∫₀^∞ χ(τ) dτ`, evaluated through the
/// Kramers–Kronig form `Ξ = (2/π) ∫₀^∞ χ''(ω)/ω dω`.
///
/// For the Ohmic family this equals `2ηω_c/π` and does not depend on T.
pub fn lamb_shift_coefficient(spectrum: &BathSpectrum) -> Result<f64> {
    lamb_shift_with(spectrum, QuadratureOptions::default())
}

pub fn lamb_shift_with(spectrum: &BathSpectrum, opts: QuadratureOptions) -> Result<f64> {
    spectrum.validate()?;
    if spectrum.coupling == 0.0 {
        return Ok(0.0);
    }
    let integrand = |w: f64| {
        if w == 0.0 {
            spectrum.coupling
        } else {
            spectrum.spectral_function(w) / w
        }
    };
    let r = quadrature::integrate_semi_infinite(integrand, 0.0, opts).map_err(|e| {
        Error::Numeric(format!(
            "Lamb-shift integral for coupling {}, cutoff {}: {e}",
            spectrum.coupling, spectrum.cutoff
        ))
    })?;
    Ok(2.0 / std::f64::consts::PI * r.value)
}

/// Hermitian PSD matrix of noise (cross-)covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    entries: CMatrix,
    classical: bool,
}

impl CorrelationMatrix {
    pub fn from_complex(entries: CMatrix) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || n != entries.ncols() {
            return Err(Error::Shape(format!(
                "correlation matrix must be square and nonempty, got {}x{}",
                n,
                entries.ncols()
            )));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Validity("correlation matrix has non-finite entries".into()));
        }
        let scale = entries.iter().fold(1.0_f64, |m, z| m.max(z.norm()));
        let herm = linalg::hermiticity_defect(&entries);
        if herm > HERMITIAN_TOL * scale {
            return Err(Error::Validity(format!(
                "correlation matrix is not Hermitian (defect {herm:e})"
            )));
        }
        let min = linalg::min_eigenvalue(&entries);
        if min < -PSD_TOL * scale {
            return Err(Error::Validity(format!(
                "correlation matrix is not positive semidefinite (min eigenvalue {min:e})"
            )));
        }
        let classical = entries.iter().all(|z| z.im == 0.0);
        Ok(Self { entries, classical })
    }

    pub fn from_real(entries: DMatrix<f64>) -> Result<Self> {
        Self::from_complex(entries.map(|x| C64::new(x, 0.0)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("correlation rows must form a square matrix".into()));
        }
        Self::from_real(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: CMatrix::identity(n, n),
            classical: true,
        }
    }

    /// `[[1, ξ], [ξ, 1]]`.
    pub fn two_link(xi: f64) -> Result<Self> {
        if !(xi.is_finite() && xi.abs() <= 1.0) {
            return Err(Error::Validity(format!("correlation coefficient |ξ| ≤ 1 required, got {xi}")));
        }
        Self::from_rows(&[vec![1.0, xi], vec![xi, 1.0]])
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn is_classical(&self) -> bool {
        self.classical
    }

    pub fn real_entries(&self) -> Option<DMatrix<f64>> {
        self.classical.then(|| self.entries.map(|z| z.re))
    }

    /// Ascending eigenvalues (clipped at zero) and rephased eigenvectors.
    pub fn eigen(&self) -> (Vec<f64>, CMatrix) {
        let (values, vectors) = linalg::hermitian_eigen(&self.entries);
        (values.into_iter().map(|v| v.max(0.0)).collect(), vectors)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigen().0
    }
}

/// Counter-based random stream keyed by `(master_seed, stream_id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Draws correlated increments with covariance `2 D dt` one step at a time.
#[derive(Debug, Clone)]
pub struct IncrementSampler {
    factor: DMatrix<f64>,
    rng: ChaCha20Rng,
    z: Vec<f64>,
}

impl IncrementSampler {
    pub fn new(d: &CorrelationMatrix, dt: f64, stream: RngStream) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
        }
        let factor = increment_factor(d, dt)?;
        let r = factor.ncols();
        Ok(Self {
            factor,
            rng: stream.rng(),
            z: vec![0.0; r],
        })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn next_into(&mut self, out: &mut [f64]) {
        for z in self.z.iter_mut() {
            *z = StandardNormal.sample(&mut self.rng);
        }
        for (a, o) in out.iter_mut().enumerate() {
            *o = self
                .z
                .iter()
                .enumerate()
                .map(|(k, z)| self.factor[(a, k)] * z)
                .sum();
        }
    }
}

/// Gaussian factor `F` with `F Fᵀ = 2 D dt`.
///
/// Full-rank matrices use the symmetric square root; rank-deficient ones
/// switch to pivoted Cholesky so that exactly correlated components stay
/// exactly correlated.
pub fn increment_factor(d: &CorrelationMatrix, dt: f64) -> Result<DMatrix<f64>> {
    let real = d.real_entries().ok_or_else(|| {
        Error::Validity("classical increments need a real symmetric correlation matrix".into())
    })?;
    let cov = real * (2.0 * dt);
    let scale = cov.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let (values, _) = linalg::symmetric_eigen(&cov);
    let min = values.first().copied().unwrap_or(0.0);
    if min > PSD_TOL * scale.max(f64::MIN_POSITIVE) {
        Ok(linalg::symmetric_sqrt(&cov))
    } else {
        Ok(linalg::pivoted_cholesky(&cov, PSD_TOL * scale))
    }
}

/// `n_steps × n` matrix of increments `dφ_a` with `⟨dφ_a dφ_b⟩ = 2 D_ab dt`.
pub fn sample_increments(
    d: &CorrelationMatrix,
    dt: f64,
    n_steps: usize,
    stream: RngStream,
) -> Result<DMatrix<f64>> {
    let mut sampler = IncrementSampler::new(d, dt, stream)?;
    let n = sampler.dim();
    let mut out = DMatrix::zeros(n_steps, n);
    let mut row = vec![0.0; n];
    for s in 0..n_steps {
        sampler.next_into(&mut row);
        for (a, v) in row.iter().enumerate() {
            out[(s, a)] = *v;
        }
    }
    Ok(out)
}

/// Exact-discretization OU stepper started from its stationary law.
#[derive(Debug, Clone)]
pub struct OuProcess {
    decay: f64,
    kick: f64,
    value: f64,
}

impl OuProcess {
    pub fn new<R: rand::Rng>(sigma: f64, tau_c: f64, dt: f64, rng: &mut R) -> Result<Self> {
        NoiseSpec::OrnsteinUhlenbeck { sigma, tau_c }.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
        }
        let decay = (-dt / tau_c).exp();
        let z: f64 = StandardNormal.sample(rng);
        Ok(Self {
            decay,
            kick: sigma * (1.0 - decay * decay).max(0.0).sqrt(),
            value: sigma * z,
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn advance<R: rand::Rng>(&mut self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.value = self.decay * self.value + self.kick * z;
        self.value
    }
}

/// `n_steps` samples of a stationary OU path on a grid of spacing `dt`.
pub fn ou_path(sigma: f64, tau_c: f64, dt: f64, n_steps: usize, stream: RngStream) -> Result<Vec<f64>> {
    let mut rng = stream.rng();
    let mut p = OuProcess::new(sigma, tau_c, dt, &mut rng)?;
    let mut out = Vec::with_capacity(n_steps);
    if n_steps > 0 {
        out.push(p.value());
    }
    for _ in 1..n_steps {
        out.push(p.advance(&mut rng));
    }
    Ok(out)
}

/// `Γ_ab = 2 J_a J_b D_ab`.
pub fn rate_matrix(amplitudes: &[f64], d: &CorrelationMatrix) -> Result<CorrelationMatrix> {
    if amplitudes.len() != d.dim() {
        return Err(Error::Shape(format!(
            "{} amplitudes for a {}x{} correlation matrix",
            amplitudes.len(),
            d.dim(),
            d.dim()
        )));
    }
    let n = d.dim();
    let entries = CMatrix::from_fn(n, n, |a, b| {
        d.entries()[(a, b)] * (2.0 * amplitudes[a] * amplitudes[b])
    });
    CorrelationMatrix::from_complex(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wiener_and_ou_rates() {
        assert!((effective_rate(&NoiseSpec::Wiener { d_phi: 1.0 }, 0.1) - 0.02).abs() < 1e-16);
        let ou = NoiseSpec::OrnsteinUhlenbeck { sigma: 1.0, tau_c: 1.0 };
        assert_eq!(effective_rate(&ou, 1.0), 2.0);
        assert_eq!(effective_rate(&NoiseSpec::Wiener { d_phi: 0.0 }, 3.0), 0.0);
    }

    #[test]
    fn ohmic_zero_frequency_limit() {
        let b = BathSpectrum::ohmic(1.0, 0.5, 10.0).unwrap();
        assert_eq!(ohmic_sff0(&b), 1.0);
        assert_eq!(ohmic_sff0(&BathSpectrum::ohmic(1.0, 0.0, 1.0).unwrap()), 0.0);
        assert!((ohmic_sff0(&BathSpectrum::ohmic(0.3, 2.0, 1.0).unwrap()) - 1.2).abs() < 1e-15);
        // the spectrum itself approaches the same limit
        assert!((b.symmetrized(1e-7) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lamb_shift_linear_in_coupling() {
        let a = lamb_shift_coefficient(&BathSpectrum::ohmic(0.4, 0.3, 2.0).unwrap()).unwrap();
        let b = lamb_shift_coefficient(&BathSpectrum::ohmic(0.8, 0.3, 2.0).unwrap()).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12 * b.abs());
        assert_eq!(lamb_shift_coefficient(&BathSpectrum::ohmic(0.0, 1.0, 1.0).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(NoiseSpec::Wiener { d_phi: -1.0 }.validate().is_err());
        assert!(NoiseSpec::OrnsteinUhlenbeck { sigma: 1.0, tau_c: 0.0 }.validate().is_err());
        assert!(BathSpectrum::ohmic(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn correlated_increments_are_exact() {
        let d = CorrelationMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let inc = sample_increments(&d, 0.01, 500, RngStream::new(3, 9)).unwrap();
        for s in 0..500 {
            assert_eq!(inc[(s, 0)].to_bits(), inc[(s, 1)].to_bits());
        }
        let d = CorrelationMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let inc = sample_increments(&d, 0.01, 500, RngStream::new(3, 9)).unwrap();
        for s in 0..500 {
            assert_eq!(inc[(s, 0)].to_bits(), (-inc[(s, 1)]).to_bits());
        }
    }

    #[test]
    fn increments_reject_bad_input() {
        let d = CorrelationMatrix::identity(2);
        assert!(matches!(sample_increments(&d, 0.0, 3, RngStream::new(0, 0)), Err(Error::Parameter(_))));
        let c = CorrelationMatrix::from_complex(CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(1.0, 0.0), C64::new(0.0, 0.5), C64::new(0.0, -0.5), C64::new(1.0, 0.0)],
        ))
        .unwrap();
        assert!(!c.is_classical());
        assert!(matches!(sample_increments(&c, 0.1, 3, RngStream::new(0, 0)), Err(Error::Validity(_))));
    }

    #[test]
    fn tiny_negative_eigenvalues_are_clipped() {
        let d = CorrelationMatrix::from_rows(&[vec![1.0, 1.0 + 1e-11], vec![1.0 + 1e-11, 1.0]]).unwrap();
        assert!(d.eigenvalues().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_sigma_ou_is_flat() {
        let p = ou_path(0.0, 1.0, 0.1, 100, RngStream::new(1, 2)).unwrap();
        assert!(p.iter().all(|&x| x == 0.0));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn rate_matrix_examples() {
        let g = rate_matrix(&[1.0, 1.0], &CorrelationMatrix::two_link(0.5).unwrap()).unwrap();
        let want = [[2.0, 1.0], [1.0, 2.0]];
        for a in 0..2 {
            for b in 0..2 {
                assert!((g.entries()[(a, b)].re - want[a][b]).abs() < 1e-15);
            }
        }
        let g = rate_matrix(&[0.0, 1.0], &CorrelationMatrix::two_link(0.5).unwrap()).unwrap();
        assert_eq!(g.entries()[(0, 1)].norm() + g.entries()[(0, 0)].norm(), 0.0);
        let g = rate_matrix(&[1.0, 2.0], &CorrelationMatrix::identity(2)).unwrap();
        assert_eq!(g.entries()[(1, 1)].re, 8.0);
        assert_eq!(g.entries()[(0, 1)].re, 0.0);
        assert!(rate_matrix(&[1.0], &CorrelationMatrix::identity(2)).is_err());
    }
}
