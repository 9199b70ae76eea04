//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{CMatrix, Error, Result, C64};

pub fn zeros(n: usize) -> CMatrix {
    CMatrix::zeros(n, n)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn anticommutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b + b * a
}

pub fn dagger(a: &CMatrix) -> CMatrix {
    a.adjoint()
}

pub fn trace(a: &CMatrix) -> C64 {
    a.trace()
}

/// Max-abs entry of `a - a†`.
pub fn hermiticity_defect(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * C64::new(0.5, 0.0)
}

pub fn frobenius_norm(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Spectral (largest singular value) norm.
pub fn operator_norm(a: &CMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = a.adjoint() * a;
    hermitian_eigenvalues(&hermitian_part(&gram))
        .into_iter()
        .fold(0.0_f64, f64::max)
        .sqrt()
}

/// Iteration cap for singular value decompositions.
pub const SVD_MAX_ITER: usize = 10_000;

fn svd(a: &CMatrix, vectors: bool) -> Result<nalgebra::SVD<C64, nalgebra::Dyn, nalgebra::Dyn>> {
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numeric("SVD of non-finite matrix".into()));
    }
    a.clone()
        .try_svd(vectors, vectors, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))
}

/// Singular values in no particular order.
pub fn singular_values(a: &CMatrix) -> Result<Vec<f64>> {
    Ok(svd(a, false)?.singular_values.iter().copied().collect())
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Column-stacking vectorization.
pub fn vec_col(a: &CMatrix) -> DVector<C64> {
    DVector::from_column_slice(a.as_slice())
}

pub fn unvec_col(v: &DVector<C64>, n: usize) -> CMatrix {
    CMatrix::from_column_slice(n, n, v.as_slice())
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
///
/// Each eigenvector is rephased so that its first entry of magnitude above
/// `1e-12` is real and positive.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    let eig = nalgebra::SymmetricEigen::new(hermitian_part(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        if let Some(lead) = v.iter().find(|z| z.norm() > 1e-12).copied() {
            let phase = lead.conj() / lead.norm();
            v *= phase;
        }
        vectors.set_column(col, &v);
    }
    (values, vectors)
}

pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = nalgebra::SymmetricEigen::new(hermitian_part(a))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn min_eigenvalue(a: &CMatrix) -> f64 {
    hermitian_eigenvalues(a).first().copied().unwrap_or(0.0)
}

/// Real symmetric eigen-decomposition, ascending, with the first nonzero
/// component of every eigenvector made positive.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        if let Some(lead) = v.iter().find(|x| x.abs() > 1e-12).copied() {
            if lead < 0.0 {
                v.neg_mut();
            }
        }
        vectors.set_column(col, &v);
    }
    (values, vectors)
}

/// Cholesky with complete pivoting for a real PSD matrix.
///
/// Returns `F` (n × rank) with `F Fᵀ = A` up to `tol`. Rows of linearly
/// dependent components are exact multiples of each other, so a rank-one
/// matrix such as `[[c, c], [c, c]]` yields bitwise-equal rows.
pub fn pivoted_cholesky(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut work = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut rank = 0;
    for k in 0..n {
        // pick the largest remaining diagonal
        let (piv, &dmax) = (k..n)
            .map(|i| (i, &work[(perm[i], perm[i])]))
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty range");
        if dmax <= tol {
            break;
        }
        perm.swap(k, piv);
        let pk = perm[k];
        let root = dmax.sqrt();
        l[(pk, k)] = root;
        // scale through the pivot so exactly dependent rows stay bitwise equal
        for &pi in &perm[k + 1..] {
            l[(pi, k)] = (work[(pi, pk)] / dmax) * root;
        }
        for &pi in &perm[k + 1..] {
            for &pj in &perm[k + 1..] {
                work[(pi, pj)] -= l[(pi, k)] * l[(pj, k)];
            }
        }
        rank += 1;
    }
    l.columns(0, rank).into_owned()
}

/// Symmetric square root `V diag(√λ) Vᵀ` of a real PSD matrix.
pub fn symmetric_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = symmetric_eigen(a);
    let roots = DMatrix::from_diagonal(&DVector::from_iterator(
        values.len(),
        values.iter().map(|&l| l.max(0.0).sqrt()),
    ));
    &vectors * roots * vectors.transpose()
}

/// Matrix exponential.
pub fn expm(a: &CMatrix) -> CMatrix {
    a.clone().exp()
}

/// Trace distance `½‖a − b‖₁` between Hermitian matrices.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    0.5 * hermitian_eigenvalues(&(a - b))
        .iter()
        .map(|x| x.abs())
        .sum::<f64>()
}

/// Eigen-decomposition of a general complex matrix.
#[derive(Debug, Clone)]
pub struct GeneralEigen {
    pub values: Vec<C64>,
    /// Unit-norm right eigenvectors as columns.
    pub right: CMatrix,
    /// Unit-norm left eigenvectors as columns (`yᴴ A = λ yᴴ`).
    pub left: CMatrix,
}

/// Full eigen-decomposition via the complex Schur form `A = Q T Qᴴ`.
///
/// Right eigenvectors come from back-substitution on `T`, left ones from
/// forward substitution on `Tᴴ`.
pub fn general_eigen(a: &CMatrix) -> Result<GeneralEigen> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Shape(format!("eigen of non-square {}x{}", n, a.ncols())));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numeric("eigen-decomposition of non-finite matrix".into()));
    }
    let schur = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let values: Vec<C64> = (0..n).map(|k| t[(k, k)]).collect();
    let scale = frobenius_norm(&t).max(f64::MIN_POSITIVE);
    // floor keeps |smin|² representable in complex division
    let smin = (f64::EPSILON * scale).max(1e-150);
    let guard = |d: C64| if d.norm() < smin { C64::new(smin, 0.0) } else { d };

    let mut right = CMatrix::zeros(n, n);
    let mut left = CMatrix::zeros(n, n);
    for k in 0..n {
        let lambda = values[k];

        let mut y = DVector::<C64>::zeros(n);
        y[k] = C64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut s = C64::new(0.0, 0.0);
            for m in i + 1..=k {
                s += t[(i, m)] * y[m];
            }
            y[i] = -s / guard(t[(i, i)] - lambda);
        }
        let x = &q * y;
        right.set_column(k, &(&x / C64::new(x.norm(), 0.0)));

        let mut w = DVector::<C64>::zeros(n);
        w[k] = C64::new(1.0, 0.0);
        for i in k + 1..n {
            let mut s = C64::new(0.0, 0.0);
            for m in k..i {
                s += t[(m, i)].conj() * w[m];
            }
            w[i] = -s / guard((t[(i, i)] - lambda).conj());
        }
        let yl = &q * w;
        left.set_column(k, &(&yl / C64::new(yl.norm(), 0.0)));
    }
    Ok(GeneralEigen { values, right, left })
}

/// Groups eigenvalue indices whose mutual distance chains below `tol`.
pub fn cluster_eigenvalues(values: &[C64], tol: f64) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn root(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (values[i] - values[j]).norm() <= tol {
                let (ri, rj) = (root(&mut label, i), root(&mut label, j));
                if ri != rj {
                    label[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut index_of_root = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut label, i);
        if index_of_root[r] == usize::MAX {
            index_of_root[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[index_of_root[r]].push(i);
    }
    groups
}

/// Norm of the spectral projector onto the invariant subspace belonging to a
/// cluster of `m` (nearly) equal eigenvalues centred at `center`.
///
/// Right and left subspaces are the null spaces of `(A − cI)^m` and its
/// adjoint; the projector norm is `1/cos` of their largest principal angle.
pub fn cluster_condition(a: &CMatrix, center: C64, m: usize) -> Result<f64> {
    let n = a.nrows();
    let shifted = a - CMatrix::identity(n, n) * center;
    let mut power = shifted.clone();
    for _ in 1..m {
        power = &power * &shifted;
    }
    // both bases come from V: U columns for zero singular values are not reliable
    let x = null_basis(&power, m)?;
    let y = null_basis(&power.adjoint(), m)?;
    let overlap = y.adjoint() * x;
    let smin = singular_values(&overlap)?.into_iter().fold(f64::INFINITY, f64::min);
    Ok(if smin <= 0.0 { f64::INFINITY } else { (1.0 / smin).max(1.0) })
}

/// Right singular vectors of the `m` smallest singular values, as columns.
fn null_basis(a: &CMatrix, m: usize) -> Result<CMatrix> {
    let svd = svd(a, true)?;
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let mut out = CMatrix::zeros(a.ncols(), m);
    for (col, &k) in order[..m].iter().enumerate() {
        out.set_column(col, &v_t.row(k).adjoint());
    }
    Ok(out)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)])
}

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivoted_cholesky_rank_one_rows_are_bitwise_equal() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 0.3, 0.3, 0.3]);
        let f = pivoted_cholesky(&a, 1e-14);
        assert_eq!(f.ncols(), 1);
        assert_eq!(f[(0, 0)].to_bits(), f[(1, 0)].to_bits());
        let b = DMatrix::from_row_slice(2, 2, &[0.3, -0.3, -0.3, 0.3]);
        let g = pivoted_cholesky(&b, 1e-14);
        assert_eq!(g[(0, 0)].to_bits(), (-g[(1, 0)]).to_bits());
    }

    #[test]
    fn pivoted_cholesky_reconstructs_full_rank() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = pivoted_cholesky(&a, 1e-14);
        assert!((&f * f.transpose() - &a).abs().max() < 1e-12);
    }

    #[test]
    fn general_eigen_of_jordan_like_block_is_ill_conditioned() {
        let eps = 1e-8;
        let a = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(eps, 0.0), c(0.0, 0.0)]);
        let e = general_eigen(&a).unwrap();
        let y0 = e.left.column(0);
        let x0 = e.right.column(0);
        let kappa = 1.0 / y0.dotc(&x0).norm();
        assert!(kappa > 1e3, "kappa = {kappa}");
    }

    #[test]
    fn general_eigen_satisfies_definitions() {
        let a = CMatrix::from_fn(5, 5, |i, j| c((i * 7 + j * 3) as f64 % 5.0 - 2.0, (i + 2 * j) as f64 % 3.0 - 1.0));
        let e = general_eigen(&a).unwrap();
        for k in 0..5 {
            let x = e.right.column(k).into_owned();
            let y = e.left.column(k).into_owned();
            let lam = e.values[k];
            assert!((&a * &x - &x * lam).norm() < 1e-10);
            assert!((y.adjoint() * &a - y.adjoint() * lam).norm() < 1e-10);
        }
    }

    #[test]
    fn general_eigen_of_zero_matrix_is_finite() {
        let e = general_eigen(&CMatrix::zeros(4, 4)).unwrap();
        assert!(e.right.iter().chain(e.left.iter()).all(|z| z.re.is_finite() && z.im.is_finite()));
        assert!(e.values.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn cluster_condition_of_normal_degenerate_pair_is_one() {
        let a = CMatrix::from_diagonal(&DVector::from_vec(vec![c(-1.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0)]));
        assert!((cluster_condition(&a, c(-1.0, 0.0), 2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cluster_condition_of_rotated_degenerate_pair_is_one() {
        let h = CMatrix::from_fn(4, 4, |i, j| c((i * 3 + j) as f64 * 0.1, (i as f64 - j as f64) * 0.2));
        let (_, q) = hermitian_eigen(&hermitian_part(&h));
        let d = CMatrix::from_diagonal(&DVector::from_vec(vec![c(-0.3, 0.0), c(-0.3, 0.0), c(0.0, 0.0), c(-1.1, 0.0)]));
        let a = &q * d * q.adjoint();
        assert!((cluster_condition(&a, c(-0.3, 0.0), 2).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn trace_distance_of_orthogonal_pure_states_is_one() {
        let a = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let b = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!((trace_distance(&a, &b) - 1.0).abs() < 1e-14);
    }
}
