//! Dense Hermitian linear algebra.
//!
//! Every operator in the crate (states, test operators, projectors) is a
//! [`HermitianOperator`]. Construction checks hermiticity and symmetrizes, so
//! the rest of the code can assume exact Hermitian input. Logarithms are base 2.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::fmt;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Absolute hermiticity tolerance, scaled by `max(1, max |a_ij|)`.
pub const HERMITICITY_TOL: f64 = 1e-12;

/// Eigenvalues with `|λ| <= SUPPORT_TOL * ‖A‖` count as exact zeros.
pub const SUPPORT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not Hermitian: |a[{row}][{col}] - conj(a[{col}][{row}])| = {deviation:e}")]
    NotHermitian {
        row: usize,
        col: usize,
        deviation: f64,
    },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("inverse requested on an operator with trivial support")]
    EmptySupport,
    #[error("matrix function {0} undefined on a negative eigenvalue {1:e}")]
    NegativeSpectrum(&'static str, f64),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// A dense complex Hermitian matrix.
#[derive(Clone, PartialEq)]
pub struct HermitianOperator {
    mat: CMatrix,
}

impl fmt::Debug for HermitianOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HermitianOperator({}x{})", self.dim(), self.dim())?;
        for i in 0..self.dim() {
            write!(f, "\n  [")?;
            for j in 0..self.dim() {
                let z = self.mat[(i, j)];
                write!(f, " {:+.6}{:+.6}i", z.re, z.im)?;
            }
            write!(f, " ]")?;
        }
        Ok(())
    }
}

impl HermitianOperator {
    /// Validates and symmetrizes `(A + A†)/2`.
    pub fn new(mat: CMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(LinalgError::NotSquare {
                rows: mat.nrows(),
                cols: mat.ncols(),
            });
        }
        let n = mat.nrows();
        let mut scale = 1.0f64;
        for i in 0..n {
            for j in 0..n {
                let z = mat[(i, j)];
                if !z.re.is_finite() || !z.im.is_finite() {
                    return Err(LinalgError::NonFinite { row: i, col: j });
                }
                scale = scale.max(z.norm());
            }
        }
        for i in 0..n {
            for j in i..n {
                let deviation = (mat[(i, j)] - mat[(j, i)].conj()).norm();
                if deviation > HERMITICITY_TOL * scale {
                    return Err(LinalgError::NotHermitian {
                        row: i,
                        col: j,
                        deviation,
                    });
                }
            }
        }
        Ok(Self::symmetrized(mat))
    }

    /// Symmetrizes without the tolerance check. For internal results that are
    /// Hermitian up to round-off by construction.
    pub(crate) fn symmetrized(mat: CMatrix) -> Self {
        let adj = mat.adjoint();
        Self {
            mat: (mat + adj) * c(0.5, 0.0),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: CMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: CMatrix::identity(dim, dim),
        }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut mat = CMatrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            mat[(i, i)] = c(d, 0.0);
        }
        Self { mat }
    }

    /// Row-major real matrix.
    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| c(v, 0.0)).collect())
            .collect();
        Self::from_complex_rows(&rows)
    }

    /// Row-major complex matrix.
    pub fn from_complex_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        let mut mat = CMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(LinalgError::NotSquare {
                    rows: n,
                    cols: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                mat[(i, j)] = v;
            }
        }
        Self::new(mat)
    }

    /// `|ψ⟩⟨ψ|` (not normalized).
    pub fn projector_onto(psi: &[C64]) -> Self {
        let n = psi.len();
        let mut mat = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                mat[(i, j)] = psi[i] * psi[j].conj();
            }
        }
        Self::symmetrized(mat)
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.mat[(i, i)].re).sum()
    }

    /// Hilbert-Schmidt inner product `Re tr(A B)`.
    pub fn inner(&self, other: &HermitianOperator) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let a = self.mat[(i, j)];
                let b = other.mat[(j, i)];
                acc += a.re * b.re - a.im * b.im;
            }
        }
        acc
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            mat: &self.mat * c(s, 0.0),
        }
    }

    pub fn add(&self, other: &HermitianOperator) -> Self {
        Self {
            mat: &self.mat + &other.mat,
        }
    }

    pub fn sub(&self, other: &HermitianOperator) -> Self {
        Self {
            mat: &self.mat - &other.mat,
        }
    }

    /// `B A B†`, Hermitian whenever `A` is.
    pub fn conjugate_by(&self, b: &CMatrix) -> Self {
        Self::symmetrized(b * &self.mat * b.adjoint())
    }

    /// Kronecker product, `self` is the most significant (left) factor.
    pub fn kron(&self, other: &HermitianOperator) -> Self {
        Self {
            mat: self.mat.kronecker(&other.mat),
        }
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.mat.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn eig(&self) -> EigenSystem {
        eig_hermitian(self)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eig().eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }

    /// `‖[A, B]‖_∞` entrywise maximum of the commutator.
    pub fn commutator_norm(&self, other: &HermitianOperator) -> f64 {
        let comm = &self.mat * &other.mat - &other.mat * &self.mat;
        comm.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Eigenvalues ascending, eigenvectors as the columns of a unitary.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vector(&self, k: usize) -> Vec<C64> {
        self.eigenvectors.column(k).iter().copied().collect()
    }

    /// `U diag(f(λ)) U†`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> HermitianOperator {
        let n = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for k in 0..n {
            let w = f(self.eigenvalues[k]);
            for i in 0..n {
                scaled[(i, k)] *= w;
            }
        }
        HermitianOperator::symmetrized(scaled * self.eigenvectors.adjoint())
    }

    pub fn reconstruct(&self) -> HermitianOperator {
        self.reconstruct_with(|x| x)
    }

    /// `Σ_{k ∈ keep} |u_k⟩⟨u_k|`.
    pub fn projector(&self, keep: impl Fn(f64) -> bool) -> HermitianOperator {
        self.reconstruct_with(|x| if keep(x) { 1.0 } else { 0.0 })
    }

    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    pub fn support_threshold(&self) -> f64 {
        SUPPORT_TOL * self.spectral_norm()
    }
}

pub fn eig_hermitian(a: &HermitianOperator) -> EigenSystem {
    let n = a.dim();
    if n == 0 {
        return EigenSystem {
            eigenvalues: Vec::new(),
            eigenvectors: CMatrix::zeros(0, 0),
        };
    }
    let se = a.mat.clone().symmetric_eigen();
    let mut u = se.eigenvectors;
    let mut d = u.adjoint() * &a.mat * &u;
    jacobi_polish(&mut d, &mut u);
    let vals: Vec<f64> = (0..n).map(|i| d[(i, i)].re).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
    let eigenvalues = order.iter().map(|&i| vals[i]).collect();
    let mut eigenvectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &u.column(src));
    }
    EigenSystem {
        eigenvalues,
        eigenvectors,
    }
}

/// Cyclic complex Jacobi sweeps on a nearly diagonal Hermitian `d`,
/// accumulating rotations into `u`. The tridiagonal QR result can carry
/// off-diagonal residue around 1e-11 on clustered spectra; a sweep or two
/// brings it to round-off.
fn jacobi_polish(d: &mut CMatrix, u: &mut CMatrix) {
    let n = d.nrows();
    let scale = d.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for _sweep in 0..30 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(d[(p, q)].norm());
            }
        }
        if off <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = d[(p, q)];
                let mag = apq.norm();
                if mag <= 1e-18 * scale {
                    continue;
                }
                let phase = apq / mag;
                let theta = (d[(q, q)].re - d[(p, p)].re) / (2.0 * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                // J = diag(1, e^{iφ}) · [[c, s], [−s, c]] on (p, q)
                let jpp = c(cs, 0.0);
                let jpq = c(sn, 0.0);
                let jqp = phase * (-sn);
                let jqq = phase * cs;
                for r in 0..n {
                    let (x, y) = (d[(r, p)], d[(r, q)]);
                    d[(r, p)] = x * jpp + y * jqp;
                    d[(r, q)] = x * jpq + y * jqq;
                }
                for col in 0..n {
                    let (x, y) = (d[(p, col)], d[(q, col)]);
                    d[(p, col)] = jpp.conj() * x + jqp.conj() * y;
                    d[(q, col)] = jpq.conj() * x + jqq.conj() * y;
                }
                d[(p, q)] = c(0.0, 0.0);
                d[(q, p)] = c(0.0, 0.0);
                for r in 0..n {
                    let (x, y) = (u[(r, p)], u[(r, q)]);
                    u[(r, p)] = x * jpp + y * jqp;
                    u[(r, q)] = x * jpq + y * jqq;
                }
            }
        }
    }
}

/// Checked entry point for raw matrices.
pub fn eig_hermitian_matrix(a: &CMatrix) -> Result<EigenSystem> {
    Ok(eig_hermitian(&HermitianOperator::new(a.clone())?))
}

/// `{A ≥ 0}`: projector onto eigenvectors with non-negative eigenvalue.
/// Eigenvalues inside the support tolerance count as zero and are kept.
pub fn nonneg_projector(a: &HermitianOperator) -> HermitianOperator {
    let es = a.eig();
    let tol = es.support_threshold();
    es.projector(|x| x >= -tol)
}

/// `{A > 0} = 1 − {−A ≥ 0}`.
pub fn positive_projector(a: &HermitianOperator) -> HermitianOperator {
    let es = a.eig();
    let tol = es.support_threshold();
    es.projector(|x| x > tol)
}

/// Projector onto the support (eigenvalues above the support tolerance).
pub fn support_projector(a: &HermitianOperator) -> HermitianOperator {
    positive_projector(a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixFn {
    Sqrt,
    Log2,
    InverseOnSupport,
    InverseSqrtOnSupport,
}

impl MatrixFn {
    fn name(self) -> &'static str {
        match self {
            MatrixFn::Sqrt => "sqrt",
            MatrixFn::Log2 => "log2",
            MatrixFn::InverseOnSupport => "inverse",
            MatrixFn::InverseSqrtOnSupport => "inverse-sqrt",
        }
    }
}

/// Applies `f` spectrally. Eigenvalues within the support tolerance are exact
/// zeros; `log2` and the inverses map them to 0 (support convention).
pub fn matrix_fn(a: &HermitianOperator, f: MatrixFn) -> Result<HermitianOperator> {
    let es = a.eig();
    let tol = es.support_threshold();
    let negative = es.eigenvalues.iter().copied().find(|&x| x < -tol);
    match f {
        MatrixFn::Sqrt | MatrixFn::Log2 | MatrixFn::InverseSqrtOnSupport => {
            if let Some(x) = negative {
                return Err(LinalgError::NegativeSpectrum(f.name(), x));
            }
        }
        MatrixFn::InverseOnSupport => {}
    }
    let nonzero = es.eigenvalues.iter().any(|x| x.abs() > tol);
    if matches!(f, MatrixFn::InverseOnSupport | MatrixFn::InverseSqrtOnSupport) && !nonzero {
        return Err(LinalgError::EmptySupport);
    }
    Ok(es.reconstruct_with(|x| {
        let zero = x.abs() <= tol;
        match f {
            MatrixFn::Sqrt => {
                if zero {
                    0.0
                } else {
                    x.sqrt()
                }
            }
            MatrixFn::Log2 => {
                if zero {
                    0.0
                } else {
                    x.log2()
                }
            }
            MatrixFn::InverseOnSupport => {
                if zero {
                    0.0
                } else {
                    1.0 / x
                }
            }
            MatrixFn::InverseSqrtOnSupport => {
                if zero {
                    0.0
                } else {
                    1.0 / x.sqrt()
                }
            }
        }
    }))
}

/// Schatten ∞-norm, the largest |eigenvalue|.
pub fn op_norm(a: &HermitianOperator) -> f64 {
    a.eig().spectral_norm()
}

/// Trace norm `Σ |λ_i|`.
pub fn trace_norm(a: &HermitianOperator) -> f64 {
    a.eigenvalues().iter().map(|x| x.abs()).sum()
}

/// Singular values of a general complex matrix, descending.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Random Hermitian matrix with i.i.d. Gaussian entries (GUE-like).
pub fn random_hermitian<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> HermitianOperator {
    use rand_distr::{Distribution, StandardNormal};
    let mut mat = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            mat[(i, j)] = c(re, im);
        }
    }
    HermitianOperator::symmetrized(mat)
}

/// Haar-distributed unitary via QR of a Ginibre matrix with phase fix.
pub fn random_unitary<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    use rand_distr::{Distribution, StandardNormal};
    let mut g = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            g[(i, j)] = c(re, im);
        }
    }
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..dim {
        let d = r[(k, k)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c(1.0, 0.0) };
        for i in 0..dim {
            q[(i, k)] *= phase;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_eigenvalues() {
        let es = HermitianOperator::identity(3).eig();
        for x in es.eigenvalues {
            assert!((x - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_eigenvalues_sorted() {
        let es = HermitianOperator::from_real_diagonal(&[2.0, -1.0]).eig();
        assert!((es.eigenvalues[0] + 1.0).abs() < 1e-14);
        assert!((es.eigenvalues[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn random_reconstruction_and_unitarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in 1..=6 {
            let a = random_hermitian(dim, &mut rng);
            let es = a.eig();
            let err = max_abs(&(es.reconstruct().into_matrix() - a.matrix()));
            assert!(err <= 1e-10 * op_norm(&a).max(1.0), "dim {dim} err {err}");
            let gram = es.eigenvectors.adjoint() * &es.eigenvectors;
            assert!(max_abs(&(gram - CMatrix::identity(dim, dim))) < 1e-10);
            assert!(es.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 1)] = c(1.0, 0.0);
        let err = HermitianOperator::new(m).unwrap_err();
        assert!(matches!(err, LinalgError::NotHermitian { .. }));
        assert!(HermitianOperator::new(CMatrix::zeros(2, 3)).is_err());
        let mut nan = CMatrix::zeros(2, 2);
        nan[(1, 1)] = c(f64::NAN, 0.0);
        assert!(matches!(
            HermitianOperator::new(nan),
            Err(LinalgError::NonFinite { .. })
        ));
    }

    #[test]
    fn symmetrizes_roundoff() {
        let mut m = CMatrix::identity(2, 2);
        m[(0, 1)] = c(0.5, 1e-14);
        m[(1, 0)] = c(0.5, 0.0);
        let h = HermitianOperator::new(m).unwrap();
        assert_eq!(h.matrix()[(0, 1)], h.matrix()[(1, 0)].conj());
    }

    #[test]
    fn projector_examples() {
        let p = nonneg_projector(&HermitianOperator::from_real_diagonal(&[1.0, -1.0]));
        assert!(max_abs(&(p.into_matrix() - HermitianOperator::from_real_diagonal(&[1.0, 0.0]).into_matrix())) < 1e-14);

        let psd = HermitianOperator::from_real_rows(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let p = nonneg_projector(&psd);
        assert!(max_abs(&(p.into_matrix() - CMatrix::identity(2, 2))) < 1e-12);

        // Pauli X: {X ≥ 0} = |+⟩⟨+|
        let x = HermitianOperator::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = nonneg_projector(&x);
        let s = 1.0 / 2f64.sqrt();
        let plus = HermitianOperator::projector_onto(&[c(s, 0.0), c(s, 0.0)]);
        let minus = HermitianOperator::projector_onto(&[c(s, 0.0), c(-s, 0.0)]);
        assert!((p.inner(&plus) - 1.0).abs() < 1e-12);
        assert!(p.inner(&minus).abs() < 1e-12);
    }

    #[test]
    fn projectors_partition_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in 2..=6 {
            let a = random_hermitian(dim, &mut rng);
            let p_nonneg = nonneg_projector(&a);
            let p_neg = positive_projector(&a.scale(-1.0));
            let sum = p_nonneg.add(&p_neg);
            assert!(max_abs(&(sum.matrix() - CMatrix::identity(dim, dim))) < 1e-10);
            let pp = p_nonneg.matrix() * p_nonneg.matrix();
            assert!(max_abs(&(pp - p_nonneg.matrix())) < 1e-10);
            let sandwiched = HermitianOperator::symmetrized(p_nonneg.matrix() * a.matrix() * p_nonneg.matrix());
            assert!(sandwiched.min_eigenvalue() > -1e-10);
            let sandwiched_neg = HermitianOperator::symmetrized(p_neg.matrix() * a.matrix() * p_neg.matrix());
            assert!(sandwiched_neg.max_eigenvalue() < 1e-10);
        }
    }

    #[test]
    fn matrix_functions() {
        let r = matrix_fn(&HermitianOperator::from_real_diagonal(&[4.0, 9.0]), MatrixFn::Sqrt).unwrap();
        assert!((r.matrix()[(0, 0)].re - 2.0).abs() < 1e-14);
        assert!((r.matrix()[(1, 1)].re - 3.0).abs() < 1e-14);

        let l = matrix_fn(&HermitianOperator::identity(3), MatrixFn::Log2).unwrap();
        assert!(l.max_abs_entry() < 1e-14);

        // zero eigenvalue → 0 under log2 (support convention)
        let l = matrix_fn(&HermitianOperator::from_real_diagonal(&[0.5, 0.0]), MatrixFn::Log2).unwrap();
        assert!((l.matrix()[(0, 0)].re + 1.0).abs() < 1e-14);
        assert!(l.matrix()[(1, 1)].norm() < 1e-14);

        assert_eq!(
            matrix_fn(&HermitianOperator::zeros(2), MatrixFn::InverseOnSupport).unwrap_err(),
            LinalgError::EmptySupport
        );
        assert!(matrix_fn(&HermitianOperator::from_real_diagonal(&[1.0, -1.0]), MatrixFn::Sqrt).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in 2..=5 {
            let g = random_hermitian(dim, &mut rng);
            let psd = HermitianOperator::symmetrized(g.matrix() * g.matrix());
            let s = matrix_fn(&psd, MatrixFn::Sqrt).unwrap();
            let err = max_abs(&(s.matrix() * s.matrix() - psd.matrix()));
            assert!(err < 1e-10 * op_norm(&psd).max(1.0));
        }
    }

    #[test]
    fn operator_norm() {
        assert!((op_norm(&HermitianOperator::identity(4)) - 1.0).abs() < 1e-14);
        assert!((op_norm(&HermitianOperator::from_real_diagonal(&[-3.0, 2.0])) - 3.0).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in 1..=6 {
            let a = random_hermitian(dim, &mut rng);
            let sv = singular_values(a.matrix());
            assert!((op_norm(&a) - sv[0]).abs() < 1e-10 * sv[0].max(1.0));
        }
    }

    #[test]
    fn clustered_spectrum_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let u = random_unitary(3, &mut rng);
            let a = HermitianOperator::from_real_diagonal(&[0.072, 0.4621, 0.4658]).conjugate_by(&u);
            let es = a.eig();
            assert!(es.reconstruct().sub(&a).max_abs_entry() < 1e-14);
        }
    }

    #[test]
    fn haar_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_unitary(4, &mut rng);
        let gram = u.adjoint() * &u;
        assert!(max_abs(&(gram - CMatrix::identity(4, 4))) < 1e-12);
    }
}
