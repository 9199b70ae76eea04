//! Anyon operators on small lattices.
//!
//! Basis states of an `n`-site space with per-site occupancy cutoff `c` are
//! enumerated site-major, little-endian: the state with occupations
//! `(n_0, n_1, …)` has index `Σ_j n_j (c+1)^j`, so site 0 is the fastest
//! varying digit. All operators are dense.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::linalg::{self, c};
use crate::noise::CorrelationMatrix;
use crate::{CMatrix, Error, Result, C64};

/// Default upper bound on the Hilbert-space dimension.
pub const DEFAULT_DIM_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertSpace {
    n_sites: usize,
    cutoff: usize,
    dim: usize,
}

impl HilbertSpace {
    pub fn new(n_sites: usize, cutoff: usize) -> Result<Self> {
        Self::with_cap(n_sites, cutoff, DEFAULT_DIM_CAP)
    }

    /// Hardcore (cutoff 1) space.
    pub fn hardcore(n_sites: usize) -> Result<Self> {
        Self::new(n_sites, 1)
    }

    pub fn with_cap(n_sites: usize, cutoff: usize, cap: usize) -> Result<Self> {
        if n_sites == 0 || cutoff == 0 {
            return Err(Error::Parameter(format!(
                "n_sites and cutoff must be positive (got {n_sites}, {cutoff})"
            )));
        }
        let mut dim: usize = 1;
        for _ in 0..n_sites {
            dim = dim
                .checked_mul(cutoff + 1)
                .filter(|&d| d <= cap)
                .ok_or(Error::Size {
                    what: "hilbert space dimension",
                    value: (cutoff + 1).saturating_pow(n_sites as u32),
                    limit: cap,
                })?;
        }
        Ok(Self {
            n_sites,
            cutoff,
            dim,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_hardcore(&self) -> bool {
        self.cutoff == 1
    }

    pub fn occupations(&self, index: usize) -> Vec<usize> {
        let base = self.cutoff + 1;
        let mut rest = index;
        (0..self.n_sites)
            .map(|_| {
                let n = rest % base;
                rest /= base;
                n
            })
            .collect()
    }

    pub fn index_of(&self, occupations: &[usize]) -> Result<usize> {
        if occupations.len() != self.n_sites {
            return Err(Error::Shape(format!(
                "expected {} occupations, got {}",
                self.n_sites,
                occupations.len()
            )));
        }
        let base = self.cutoff + 1;
        let mut index = 0;
        for &n in occupations.iter().rev() {
            if n > self.cutoff {
                return Err(Error::Parameter(format!(
                    "occupation {n} exceeds cutoff {}",
                    self.cutoff
                )));
            }
            index = index * base + n;
        }
        Ok(index)
    }

    /// Indices of the states holding exactly one excitation, ordered by site.
    pub fn single_excitation_indices(&self) -> Vec<usize> {
        let base = self.cutoff + 1;
        (0..self.n_sites).map(|j| base.pow(j as u32)).collect()
    }
}

/// Dense square operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    matrix: CMatrix,
}

impl Operator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Shape(format!(
                "operator must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix })
    }

    /// Builds an operator and checks its dimension against `space`.
    pub fn on(space: &HilbertSpace, matrix: CMatrix) -> Result<Self> {
        let op = Self::new(matrix)?;
        if op.dim() != space.dim() {
            return Err(Error::Shape(format!(
                "operator dimension {} does not match space dimension {}",
                op.dim(),
                space.dim()
            )));
        }
        Ok(op)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: linalg::identity(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            matrix: linalg::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dagger(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn hermiticity_defect(&self) -> f64 {
        linalg::hermiticity_defect(&self.matrix)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self {
            matrix: &self.matrix * s,
        }
    }

    /// Restriction to the single-excitation manifold, basis ordered by site.
    pub fn single_excitation_block(&self, space: &HilbertSpace) -> Result<Self> {
        if self.dim() != space.dim() {
            return Err(Error::Shape("operator does not act on this space".into()));
        }
        let idx = space.single_excitation_indices();
        let n = idx.len();
        Ok(Self {
            matrix: CMatrix::from_fn(n, n, |r, s| self.matrix[(idx[r], idx[s])]),
        })
    }
}

impl std::ops::Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator {
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl std::ops::Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator {
            matrix: &self.matrix * &rhs.matrix,
        }
    }
}

/// Exchange phase θ, stored reduced to `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct StatisticalAngle(f64);

impl StatisticalAngle {
    pub fn new(theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::Parameter(format!("statistical angle {theta} is not finite")));
        }
        let r = theta.rem_euclid(TAU);
        Ok(Self(if r >= TAU { 0.0 } else { r }))
    }

    pub fn bosonic() -> Self {
        Self(0.0)
    }

    pub fn fermionic() -> Self {
        Self(PI)
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for StatisticalAngle {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<StatisticalAngle> for f64 {
    fn from(a: StatisticalAngle) -> f64 {
        a.0
    }
}

/// Tunneling link `i ← j` with amplitude `J_a` and a phase offset that tells
/// parallel paths on the same bond apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub i: usize,
    pub j: usize,
    pub amplitude: f64,
    #[serde(default)]
    pub phase_offset: f64,
}

impl Link {
    pub fn new(i: usize, j: usize, amplitude: f64) -> Self {
        Self {
            i,
            j,
            amplitude,
            phase_offset: 0.0,
        }
    }

    pub fn with_offset(mut self, phase_offset: f64) -> Self {
        self.phase_offset = phase_offset;
        self
    }

    /// The single bond of the two-mode model. With the manifold basis
    /// `{e_0, e_1}` this orientation gives `K_θ = −sinθ σx + cosθ σy`.
    pub fn two_mode(amplitude: f64) -> Self {
        Self::new(1, 0, amplitude)
    }

    pub fn validate(&self, n_sites: usize) -> Result<()> {
        let fail = |reason: &str| Error::InvalidLink {
            i: self.i,
            j: self.j,
            reason: reason.to_string(),
        };
        if self.i == self.j {
            return Err(fail("link endpoints coincide"));
        }
        if self.i >= n_sites || self.j >= n_sites {
            return Err(fail(&format!("site index out of range for {n_sites} sites")));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(fail("amplitude must be finite and non-negative"));
        }
        if !self.phase_offset.is_finite() {
            return Err(fail("phase offset must be finite"));
        }
        Ok(())
    }
}

/// Truncated bosonic annihilator on `site`.
pub fn boson_annihilator(space: &HilbertSpace, site: usize) -> Result<Operator> {
    if site >= space.n_sites() {
        return Err(Error::Parameter(format!("site {site} out of range")));
    }
    let dim = space.dim();
    let stride = (space.cutoff() + 1).pow(site as u32);
    let mut m = CMatrix::zeros(dim, dim);
    for idx in 0..dim {
        let n = (idx / stride) % (space.cutoff() + 1);
        if n > 0 {
            m[(idx - stride, idx)] = c((n as f64).sqrt(), 0.0);
        }
    }
    Operator::on(space, m)
}

pub fn number_operator(space: &HilbertSpace, site: usize) -> Result<Operator> {
    let b = boson_annihilator(space, site)?;
    Ok(&b.dagger() * &b)
}

/// Jordan–Wigner dressed annihilators `a_j = b_j exp(iθ Σ_{k<j} n_k)`.
pub fn build_jw_anyon_ops(space: &HilbertSpace, theta: StatisticalAngle) -> Result<Vec<Operator>> {
    let dim = space.dim();
    (0..space.n_sites())
        .map(|j| {
            let b = boson_annihilator(space, j)?;
            let string = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                dim,
                (0..dim).map(|idx| {
                    let occ = space.occupations(idx);
                    let left: usize = occ[..j].iter().sum();
                    C64::from_polar(1.0, theta.radians() * left as f64)
                }),
            ));
            Operator::on(space, b.matrix() * string)
        })
        .collect()
}

fn check_family(ops: &[Operator]) -> Result<usize> {
    let dim = ops
        .first()
        .map(Operator::dim)
        .ok_or_else(|| Error::Shape("empty operator list".into()))?;
    if ops.iter().any(|o| o.dim() != dim) {
        return Err(Error::Shape("operators have mismatched dimensions".into()));
    }
    Ok(dim)
}

/// Largest operator-norm residual of `a_i a_j = e^{iθ} a_j a_i` and
/// `a_i a_j† = e^{−iθ} a_j† a_i` over all ordered pairs `i < j`.
pub fn verify_distorted_algebra(ops: &[Operator], theta: StatisticalAngle) -> Result<f64> {
    check_family(ops)?;
    let phase = C64::from_polar(1.0, theta.radians());
    let mut worst = 0.0_f64;
    for i in 0..ops.len() {
        for j in i + 1..ops.len() {
            let (ai, aj) = (ops[i].matrix(), ops[j].matrix());
            let ajd = aj.adjoint();
            let r1 = ai * aj - aj * ai * phase;
            let r2 = ai * &ajd - &ajd * ai * phase.conj();
            worst = worst.max(linalg::operator_norm(&r1)).max(linalg::operator_norm(&r2));
        }
    }
    Ok(worst)
}

/// Hermitian exchange current
/// `K = i(a_i† a_j e^{i(θ+δ)} − a_j† a_i e^{−i(θ+δ)})` of one link.
pub fn exchange_current(ops: &[Operator], link: &Link, theta: StatisticalAngle) -> Result<Operator> {
    check_family(ops)?;
    link.validate(ops.len())?;
    let hop = ops[link.i].matrix().adjoint()
        * ops[link.j].matrix()
        * C64::from_polar(1.0, theta.radians() + link.phase_offset);
    let k = (&hop - hop.adjoint()) * C64::i();
    Operator::new(k)
}

/// Hopping operator `T = a_i† a_j e^{i(θ+δ)}` of one link.
pub fn hopping_operator(ops: &[Operator], link: &Link, theta: StatisticalAngle) -> Result<Operator> {
    check_family(ops)?;
    link.validate(ops.len())?;
    Operator::new(
        ops[link.i].matrix().adjoint()
            * ops[link.j].matrix()
            * C64::from_polar(1.0, theta.radians() + link.phase_offset),
    )
}

/// `K_θ = −sinθ σx + cosθ σy` on the two-mode single-excitation manifold.
pub fn two_mode_k(theta: StatisticalAngle) -> Operator {
    let (s, co) = theta.radians().sin_cos();
    Operator {
        matrix: linalg::pauli_x() * c(-s, 0.0) + linalg::pauli_y() * c(co, 0.0),
    }
}

/// One collective exchange current `K^(ν) = Σ_a U_{aν} K^(a)` with its rate.
#[derive(Debug, Clone)]
pub struct CollectiveCurrent {
    pub operator: Operator,
    /// `γ_ν = 2J² λ_ν`.
    pub rate: f64,
    /// Eigenvalue `λ_ν` of the correlation matrix (clipped at zero).
    pub eigenvalue: f64,
    /// Column `ν` of the eigenvector matrix.
    pub coefficients: Vec<C64>,
}

/// Rotates link currents into the eigenbasis of the correlation matrix.
///
/// Eigenvalues are ascending; each eigenvector's first non-negligible
/// component is real and positive.
pub fn collective_currents(
    ks: &[Operator],
    d: &CorrelationMatrix,
    coupling: f64,
) -> Result<Vec<CollectiveCurrent>> {
    let dim = check_family(ks)?;
    if ks.len() != d.dim() {
        return Err(Error::Shape(format!(
            "{} currents but correlation matrix is {}x{}",
            ks.len(),
            d.dim(),
            d.dim()
        )));
    }
    let (values, vectors) = d.eigen();
    Ok(values
        .iter()
        .enumerate()
        .map(|(nu, &lambda)| {
            let coefficients: Vec<C64> = vectors.column(nu).iter().copied().collect();
            let matrix = ks
                .iter()
                .zip(&coefficients)
                .fold(CMatrix::zeros(dim, dim), |acc, (k, &u)| acc + k.matrix() * u);
            CollectiveCurrent {
                operator: Operator { matrix },
                rate: 2.0 * coupling * coupling * lambda,
                eigenvalue: lambda,
                coefficients,
            }
        })
        .collect())
}
