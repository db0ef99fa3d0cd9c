//! Density operators, CQ states and the maps between them.
//!
//! Tensor convention: in `A ⊗ B` the left factor is the most significant
//! index, and the classical register of a CQ state is always leftmost.

use crate::linalg::{
    c, eig_hermitian, matrix_fn, singular_values, trace_norm, CMatrix, HermitianOperator,
    LinalgError, MatrixFn, SUPPORT_TOL,
};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

/// Largest total dimension built by explicit tensor products.
pub const MAX_TENSOR_DIM: usize = 64;

/// Relative gap below which two eigenvalues share an eigenspace.
pub const CLUSTER_TOL: f64 = 1e-9;

const POSITIVITY_TOL: f64 = 1e-12;
const NORMALIZATION_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("operator is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositive(f64),
    #[error("trace {0} outside (0, 1]")]
    BadTrace(f64),
    #[error("tensor dimension {0} exceeds the explicit limit {MAX_TENSOR_DIM}")]
    TooLarge(usize),
    #[error("subsystem dims {dims:?} do not multiply to {total}")]
    BadDims { dims: Vec<usize>, total: usize },
    #[error("invalid subsystem permutation {0:?}")]
    BadPermutation(Vec<usize>),
    #[error("CQ state: {0}")]
    BadCq(String),
}

pub type Result<T> = std::result::Result<T, StateError>;

/// A possibly subnormalized density operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    op: HermitianOperator,
    normalized: bool,
}

impl DensityOperator {
    pub fn new(op: HermitianOperator) -> Result<Self> {
        let scale = op.max_abs_entry().max(1.0);
        let min = op.min_eigenvalue();
        if min < -POSITIVITY_TOL * scale {
            return Err(StateError::NotPositive(min));
        }
        let tr = op.trace();
        if !(tr > 0.0) || tr > 1.0 + POSITIVITY_TOL {
            return Err(StateError::BadTrace(tr));
        }
        let normalized = (tr - 1.0).abs() <= NORMALIZATION_TOL;
        Ok(Self { op, normalized })
    }

    /// Rescales a nonzero PSD operator to unit trace.
    pub fn normalize(op: &HermitianOperator) -> Result<Self> {
        let tr = op.trace();
        if !(tr > 0.0) {
            return Err(StateError::BadTrace(tr));
        }
        Self::new(op.scale(1.0 / tr))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            op: HermitianOperator::identity(dim).scale(1.0 / dim as f64),
            normalized: true,
        }
    }

    pub fn from_diagonal(p: &[f64]) -> Result<Self> {
        Self::new(HermitianOperator::from_real_diagonal(p))
    }

    pub fn pure(psi: &[crate::linalg::C64]) -> Result<Self> {
        Self::normalize(&HermitianOperator::projector_onto(psi))
    }

    pub fn op(&self) -> &HermitianOperator {
        &self.op
    }

    pub fn into_op(self) -> HermitianOperator {
        self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn trace(&self) -> f64 {
        self.op.trace()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

fn check_dims(dims: &[usize], total: usize) -> Result<()> {
    if dims.iter().product::<usize>() != total || dims.contains(&0) {
        return Err(StateError::BadDims {
            dims: dims.to_vec(),
            total,
        });
    }
    Ok(())
}

pub fn tensor(a: &DensityOperator, b: &DensityOperator) -> Result<DensityOperator> {
    let dim = a.dim() * b.dim();
    if dim > MAX_TENSOR_DIM {
        return Err(StateError::TooLarge(dim));
    }
    DensityOperator::new(a.op.kron(&b.op))
}

pub fn tensor_power(rho: &DensityOperator, n: usize) -> Result<DensityOperator> {
    let dim = rho.dim().checked_pow(n as u32).unwrap_or(usize::MAX);
    if dim > MAX_TENSOR_DIM {
        return Err(StateError::TooLarge(dim));
    }
    let mut acc = HermitianOperator::identity(1);
    for _ in 0..n {
        acc = acc.kron(&rho.op);
    }
    DensityOperator::new(acc)
}

/// Traces out subsystem `which` of an operator on `⊗_k C^{dims[k]}`.
pub fn partial_trace_op(
    op: &HermitianOperator,
    dims: &[usize],
    which: usize,
) -> Result<HermitianOperator> {
    check_dims(dims, op.dim())?;
    if which >= dims.len() {
        return Err(StateError::BadDims {
            dims: dims.to_vec(),
            total: op.dim(),
        });
    }
    let left: usize = dims[..which].iter().product();
    let mid = dims[which];
    let right: usize = dims[which + 1..].iter().product();
    let out = left * right;
    let m = op.matrix();
    let mut red = CMatrix::zeros(out, out);
    for a in 0..left {
        for b in 0..right {
            for a2 in 0..left {
                for b2 in 0..right {
                    let mut acc = c(0.0, 0.0);
                    for x in 0..mid {
                        acc += m[((a * mid + x) * right + b, (a2 * mid + x) * right + b2)];
                    }
                    red[(a * right + b, a2 * right + b2)] = acc;
                }
            }
        }
    }
    Ok(HermitianOperator::symmetrized(red))
}

pub fn partial_trace(
    rho: &DensityOperator,
    dims: &[usize],
    which: usize,
) -> Result<DensityOperator> {
    DensityOperator::new(partial_trace_op(&rho.op, dims, which)?)
}

/// Reorders tensor factors: factor `j` of the result is factor `perm[j]` of
/// the input.
pub fn permute_subsystems(
    op: &HermitianOperator,
    dims: &[usize],
    perm: &[usize],
) -> Result<HermitianOperator> {
    check_dims(dims, op.dim())?;
    let k = dims.len();
    let mut seen = vec![false; k];
    if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
        return Err(StateError::BadPermutation(perm.to_vec()));
    }
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let total = op.dim();
    // map[new_index] = old_index
    let mut map = vec![0usize; total];
    let mut digits = vec![0usize; k];
    for (new_idx, slot) in map.iter_mut().enumerate() {
        let mut rem = new_idx;
        for j in (0..k).rev() {
            digits[j] = rem % new_dims[j];
            rem /= new_dims[j];
        }
        let mut old_digits = vec![0usize; k];
        for j in 0..k {
            old_digits[perm[j]] = digits[j];
        }
        *slot = old_digits
            .iter()
            .zip(dims)
            .fold(0, |acc, (&d, &n)| acc * n + d);
    }
    let m = op.matrix();
    let out = CMatrix::from_fn(total, total, |i, j| m[(map[i], map[j])]);
    Ok(HermitianOperator::symmetrized(out))
}

/// An eigenspace of a Hermitian operator after clustering.
#[derive(Clone, Debug)]
pub struct Eigenspace {
    pub value: f64,
    /// Orthonormal basis as columns.
    pub basis: CMatrix,
}

impl Eigenspace {
    pub fn multiplicity(&self) -> usize {
        self.basis.ncols()
    }

    pub fn projector(&self) -> HermitianOperator {
        HermitianOperator::symmetrized(&self.basis * self.basis.adjoint())
    }
}

/// Groups eigenvalues whose relative gap is at most `cluster_tol`. Values
/// inside the support tolerance are exact zeros and form one eigenspace.
pub fn eigenspaces(sigma: &HermitianOperator, cluster_tol: f64) -> Vec<Eigenspace> {
    let es = eig_hermitian(sigma);
    let n = es.dim();
    if n == 0 {
        return Vec::new();
    }
    let zero = es.support_threshold();
    let vals: Vec<f64> = es
        .eigenvalues
        .iter()
        .map(|&x| if x.abs() <= zero { 0.0 } else { x })
        .collect();
    let mut groups: Vec<Vec<usize>> = vec![vec![0]];
    for i in 1..n {
        let (a, b) = (vals[i - 1], vals[i]);
        if b - a <= cluster_tol * a.abs().max(b.abs()) {
            groups.last_mut().unwrap().push(i);
        } else {
            groups.push(vec![i]);
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let value = g.iter().map(|&i| vals[i]).sum::<f64>() / g.len() as f64;
            let mut basis = CMatrix::zeros(n, g.len());
            for (col, &i) in g.iter().enumerate() {
                basis.set_column(col, &es.eigenvectors.column(i));
            }
            Eigenspace { value, basis }
        })
        .collect()
}

/// `Σ_s P_s A P_s` over a fixed eigenspace family.
pub fn pinch_with(spaces: &[Eigenspace], a: &HermitianOperator) -> HermitianOperator {
    let n = a.dim();
    let mut out = CMatrix::zeros(n, n);
    for s in spaces {
        let p = &s.basis * s.basis.adjoint();
        out += &p * a.matrix() * &p;
    }
    HermitianOperator::symmetrized(out)
}

/// `E_σ(A)` for an arbitrary Hermitian `A`.
pub fn pinch_operator(
    sigma: &HermitianOperator,
    a: &HermitianOperator,
    cluster_tol: f64,
) -> HermitianOperator {
    pinch_with(&eigenspaces(sigma, cluster_tol), a)
}

pub fn pinching(
    sigma: &HermitianOperator,
    rho: &DensityOperator,
    cluster_tol: f64,
) -> Result<DensityOperator> {
    DensityOperator::new(pinch_operator(sigma, &rho.op, cluster_tol))
}

/// Generalized fidelity `‖√ρ √τ‖₁ + √((1 − tr ρ)(1 − tr τ))`.
pub fn fidelity(rho: &DensityOperator, tau: &DensityOperator) -> f64 {
    let sr = matrix_fn(&rho.op, MatrixFn::Sqrt).expect("density operators are PSD");
    let st = matrix_fn(&tau.op, MatrixFn::Sqrt).expect("density operators are PSD");
    let overlap: f64 = singular_values(&(sr.matrix() * st.matrix())).iter().sum();
    let gen = ((1.0 - rho.trace()).max(0.0) * (1.0 - tau.trace()).max(0.0)).sqrt();
    (overlap + gen).clamp(0.0, 1.0)
}

pub fn purified_distance(rho: &DensityOperator, tau: &DensityOperator) -> f64 {
    let f = fidelity(rho, tau);
    (1.0 - f * f).max(0.0).sqrt()
}

/// Generalized trace distance `½‖ρ − τ‖₁ + ½|tr ρ − tr τ|`.
pub fn trace_distance(rho: &DensityOperator, tau: &DensityOperator) -> f64 {
    0.5 * trace_norm(&rho.op.sub(&tau.op)) + 0.5 * (rho.trace() - tau.trace()).abs()
}

/// ν(σ), λ(σ) and θ(σ) = min(2⌈λ⌉, ν) with ⌈λ⌉ floored at 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralStats {
    pub nu: usize,
    pub lambda: f64,
    pub theta: usize,
}

impl SpectralStats {
    fn from_parts(nu: usize, lambda: f64) -> Self {
        let theta = if lambda.is_finite() {
            let ceil = (lambda.ceil() as usize).max(1);
            (2 * ceil).min(nu)
        } else {
            nu
        };
        Self {
            nu,
            lambda,
            theta: theta.max(1),
        }
    }
}

pub fn spectral_stats(sigma: &HermitianOperator, cluster_tol: f64) -> SpectralStats {
    let spaces = eigenspaces(sigma, cluster_tol);
    let nu = spaces.len().max(1);
    let min = spaces.first().map_or(0.0, |s| s.value);
    let max = spaces.last().map_or(0.0, |s| s.value);
    let lambda = if min > 0.0 {
        (max.log2() - min.log2()).max(0.0)
    } else {
        f64::INFINITY
    };
    SpectralStats::from_parts(nu, lambda)
}

/// `λ` restricted to the support of `sigma`: log of the ratio of its largest
/// and smallest nonzero eigenvalues.
pub fn support_lambda(sigma: &HermitianOperator) -> f64 {
    let es = eig_hermitian(sigma);
    let tol = es.support_threshold().max(SUPPORT_TOL);
    let pos: Vec<f64> = es.eigenvalues.iter().copied().filter(|&x| x > tol).collect();
    match (pos.first(), pos.last()) {
        (Some(&lo), Some(&hi)) => (hi.log2() - lo.log2()).max(0.0),
        _ => 0.0,
    }
}

/// `ρ_XB = Σ_x p_x |x⟩⟨x| ⊗ φ_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct CqState {
    entries: Vec<(f64, DensityOperator)>,
    dim_b: usize,
}

impl CqState {
    pub fn new(entries: Vec<(f64, DensityOperator)>) -> Result<Self> {
        let dim_b = entries
            .first()
            .map(|(_, phi)| phi.dim())
            .ok_or_else(|| StateError::BadCq("no classical symbols".into()))?;
        let mut total = 0.0;
        for (x, (p, phi)) in entries.iter().enumerate() {
            if !(*p >= 0.0) {
                return Err(StateError::BadCq(format!("p[{x}] = {p} is negative")));
            }
            if phi.dim() != dim_b {
                return Err(StateError::BadCq(format!(
                    "phi[{x}] has dim {} but phi[0] has dim {dim_b}",
                    phi.dim()
                )));
            }
            if !phi.is_normalized() {
                return Err(StateError::BadCq(format!("phi[{x}] is not normalized")));
            }
            total += p;
        }
        if total > 1.0 + NORMALIZATION_TOL {
            return Err(StateError::BadCq(format!("probabilities sum to {total}")));
        }
        Ok(Self { entries, dim_b })
    }

    /// Classical distribution with trivial (one-dimensional) side information.
    pub fn classical(p: &[f64]) -> Result<Self> {
        Self::new(
            p.iter()
                .map(|&px| (px, DensityOperator::maximally_mixed(1)))
                .collect(),
        )
    }

    pub fn entries(&self) -> &[(f64, DensityOperator)] {
        &self.entries
    }

    pub fn num_symbols(&self) -> usize {
        self.entries.len()
    }

    pub fn dim_b(&self) -> usize {
        self.dim_b
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.entries.iter().map(|(p, _)| *p).collect()
    }

    /// `p_x φ_x`.
    pub fn weighted(&self, x: usize) -> HermitianOperator {
        let (p, phi) = &self.entries[x];
        phi.op().scale(*p)
    }

    /// Full operator on `X ⊗ B`.
    pub fn to_operator(&self) -> HermitianOperator {
        let nx = self.num_symbols();
        let db = self.dim_b;
        let mut m = CMatrix::zeros(nx * db, nx * db);
        for x in 0..nx {
            let w = self.weighted(x);
            m.view_mut((x * db, x * db), (db, db)).copy_from(w.matrix());
        }
        HermitianOperator::symmetrized(m)
    }

    pub fn to_density(&self) -> Result<DensityOperator> {
        DensityOperator::new(self.to_operator())
    }

    /// `ρ_B = Σ_x p_x φ_x`.
    pub fn marginal_b(&self) -> HermitianOperator {
        (0..self.num_symbols()).fold(HermitianOperator::zeros(self.dim_b), |acc, x| {
            acc.add(&self.weighted(x))
        })
    }

    /// n-fold i.i.d. extension, symbols indexed lexicographically.
    pub fn tensor_power(&self, n: usize) -> Result<Self> {
        let dim = (self.num_symbols() * self.dim_b)
            .checked_pow(n as u32)
            .unwrap_or(usize::MAX);
        if dim > MAX_TENSOR_DIM {
            return Err(StateError::TooLarge(dim));
        }
        let mut acc: Vec<(f64, HermitianOperator)> = vec![(1.0, HermitianOperator::identity(1))];
        for _ in 0..n {
            let mut next = Vec::with_capacity(acc.len() * self.num_symbols());
            for (p, op) in &acc {
                for (q, phi) in &self.entries {
                    next.push((p * q, op.kron(phi.op())));
                }
            }
            acc = next;
        }
        Self::new(
            acc.into_iter()
                .map(|(p, op)| DensityOperator::new(op).map(|d| (p, d)))
                .collect::<Result<Vec<_>>>()?,
        )
    }
}

/// Random density operator: Dirichlet(1,…,1) spectrum rotated by a Haar unitary.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityOperator {
    let spectrum = random_simplex(dim, rng);
    let u = crate::linalg::random_unitary(dim, rng);
    let op = HermitianOperator::from_real_diagonal(&spectrum).conjugate_by(&u);
    DensityOperator::new(op).expect("random spectrum is a valid state")
}

pub fn random_simplex<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..dim).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{op_norm, random_hermitian};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag(p: &[f64]) -> DensityOperator {
        DensityOperator::from_diagonal(p).unwrap()
    }

    fn max_diff(a: &HermitianOperator, b: &HermitianOperator) -> f64 {
        a.sub(b).max_abs_entry()
    }

    #[test]
    fn validation() {
        assert!(DensityOperator::from_diagonal(&[0.5, -0.1]).is_err());
        assert!(DensityOperator::from_diagonal(&[0.7, 0.7]).is_err());
        let sub = diag(&[0.2, 0.3]);
        assert!(!sub.is_normalized());
        assert!(diag(&[0.2, 0.8]).is_normalized());
    }

    #[test]
    fn tensor_examples() {
        let rho = diag(&[0.3, 0.7]);
        let one = DensityOperator::maximally_mixed(1);
        assert!(max_diff(tensor(&rho, &one).unwrap().op(), rho.op()) < 1e-15);
        let t = tensor(&diag(&[0.2, 0.8]), &diag(&[0.6, 0.4])).unwrap();
        let expect = HermitianOperator::from_real_diagonal(&[0.12, 0.08, 0.48, 0.32]);
        assert!(max_diff(t.op(), &expect) < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_density(3, &mut rng);
        assert!((tensor_power(&r, 3).unwrap().trace() - 1.0).abs() < 1e-12);
        assert!(matches!(tensor_power(&r, 4), Err(StateError::TooLarge(_))));
    }

    #[test]
    fn partial_trace_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_density(2, &mut rng);
        let b = random_density(3, &mut rng);
        let ab = tensor(&a, &b).unwrap();
        let ra = partial_trace(&ab, &[2, 3], 1).unwrap();
        let rb = partial_trace(&ab, &[2, 3], 0).unwrap();
        assert!(max_diff(ra.op(), a.op()) < 1e-13);
        assert!(max_diff(rb.op(), b.op()) < 1e-13);

        let s = 1.0 / 2f64.sqrt();
        let bell = DensityOperator::pure(&[c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0)]).unwrap();
        let red = partial_trace(&bell, &[2, 2], 0).unwrap();
        assert!(max_diff(red.op(), DensityOperator::maximally_mixed(2).op()) < 1e-14);

        let rab = random_density(6, &mut rng);
        let once = partial_trace(&rab, &[2, 3], 0).unwrap();
        let twice = partial_trace(&once, &[3], 0).unwrap();
        assert!((twice.trace() - rab.trace()).abs() < 1e-12);
        assert!(partial_trace(&rab, &[2, 2], 0).is_err());
    }

    #[test]
    fn permutation_swaps_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_density(2, &mut rng);
        let b = random_density(3, &mut rng);
        let ab = a.op().kron(b.op());
        let ba = permute_subsystems(&ab, &[2, 3], &[1, 0]).unwrap();
        assert!(max_diff(&ba, &b.op().kron(a.op())) < 1e-14);
        assert!(permute_subsystems(&ab, &[2, 3], &[0, 0]).is_err());
    }

    #[test]
    fn pinching_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = random_density(3, &mut rng);
        let same = pinching(&HermitianOperator::identity(3), &rho, CLUSTER_TOL).unwrap();
        assert!(max_diff(same.op(), rho.op()) < 1e-13);

        let sigma = HermitianOperator::from_real_diagonal(&[0.5, 0.3, 0.2]);
        let p = pinching(&sigma, &rho, CLUSTER_TOL).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { rho.op().matrix()[(i, i)] } else { c(0.0, 0.0) };
                assert!((p.op().matrix()[(i, j)] - expect).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn pinching_operator_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for dim in 2..=4 {
            for _ in 0..10 {
                let rho = random_density(dim, &mut rng);
                let sigma = random_density(dim, &mut rng);
                let nu = spectral_stats(sigma.op(), CLUSTER_TOL).nu as f64;
                let pinched = pinching(sigma.op(), &rho, CLUSTER_TOL).unwrap();
                let gap = pinched.op().scale(nu).sub(rho.op());
                assert!(gap.min_eigenvalue() > -1e-10);
                assert!(pinched.op().commutator_norm(sigma.op()) < 1e-10);
            }
        }
    }

    #[test]
    fn fidelity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rho = random_density(3, &mut rng);
        assert!((fidelity(&rho, &rho) - 1.0).abs() < 1e-7);
        assert!(purified_distance(&rho, &rho) < 1e-3);

        let e0 = DensityOperator::pure(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let e1 = DensityOperator::pure(&[c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert!(fidelity(&e0, &e1).abs() < 1e-12);
        assert!((purified_distance(&e0, &e1) - 1.0).abs() < 1e-12);

        let p = [0.2, 0.3];
        let q = [0.5, 0.4];
        let expect = (0.1f64).sqrt() + (0.12f64).sqrt() + (0.5f64 * 0.1).sqrt();
        assert!((fidelity(&diag(&p), &diag(&q)) - expect).abs() < 1e-12);
    }

    #[test]
    fn spectral_stats_examples() {
        let s = spectral_stats(&HermitianOperator::identity(3), CLUSTER_TOL);
        assert_eq!((s.nu, s.theta), (1, 1));
        assert_eq!(s.lambda, 0.0);

        let s = spectral_stats(&HermitianOperator::from_real_diagonal(&[0.5, 0.25, 0.25]), CLUSTER_TOL);
        assert_eq!((s.nu, s.theta), (2, 2));
        assert!((s.lambda - 1.0).abs() < 1e-12);

        let s = spectral_stats(&HermitianOperator::from_real_diagonal(&[0.5, 0.0]), CLUSTER_TOL);
        assert!(s.lambda.is_infinite());
        assert_eq!(s.theta, s.nu);

        let sigma = diag(&[0.6, 0.4]);
        let l1 = spectral_stats(sigma.op(), CLUSTER_TOL).lambda;
        for n in 2..=3 {
            let ln = spectral_stats(tensor_power(&sigma, n).unwrap().op(), CLUSTER_TOL).lambda;
            assert!((ln - n as f64 * l1).abs() < 1e-10);
        }
    }

    #[test]
    fn cq_state_roundtrip() {
        let phi0 = diag(&[1.0, 0.0]);
        let phi1 = DensityOperator::maximally_mixed(2);
        let cq = CqState::new(vec![(0.25, phi0), (0.75, phi1)]).unwrap();
        let full = cq.to_density().unwrap();
        assert!((full.trace() - 1.0).abs() < 1e-14);
        let rb = partial_trace(&full, &[2, 2], 0).unwrap();
        assert!(max_diff(rb.op(), &cq.marginal_b()) < 1e-14);
        assert!(CqState::new(vec![(0.9, diag(&[1.0])), (0.9, diag(&[1.0]))]).is_err());
        let sq = cq.tensor_power(2).unwrap();
        assert_eq!(sq.num_symbols(), 4);
        assert!((sq.probabilities()[3] - 0.5625).abs() < 1e-15);
    }

    fn pinching_family(dim: usize, blocks: usize, seed: u64) -> Vec<Eigenspace> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = crate::linalg::random_unitary(dim, &mut rng);
        let mut spaces = Vec::new();
        let per = dim.div_ceil(blocks);
        let mut start = 0;
        while start < dim {
            let end = (start + per).min(dim);
            spaces.push(Eigenspace {
                value: start as f64,
                basis: u.columns(start, end - start).into_owned(),
            });
            start = end;
        }
        spaces
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pinching_never_increases_norm(dim in 2usize..=8, blocks in 1usize..=4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_hermitian(dim, &mut rng);
            let a = HermitianOperator::symmetrized(g.matrix() * g.matrix());
            let spaces = pinching_family(dim, blocks, seed ^ 0x5a5a);
            let pinched = pinch_with(&spaces, &a);
            prop_assert!(op_norm(&pinched) <= op_norm(&a) * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn pinching_is_idempotent_and_trace_preserving(dim in 2usize..=5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_density(dim, &mut rng);
            let sigma = random_density(dim, &mut rng);
            let once = pinching(sigma.op(), &rho, CLUSTER_TOL).unwrap();
            let twice = pinching(sigma.op(), &once, CLUSTER_TOL).unwrap();
            prop_assert!((once.trace() - rho.trace()).abs() < 1e-12);
            prop_assert!(max_diff(once.op(), twice.op()) < 1e-12);
        }

        #[test]
        fn purified_distance_monotone(dim in 2usize..=4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_density(2 * dim, &mut rng);
            let tau = random_density(2 * dim, &mut rng);
            let before = purified_distance(&rho, &tau);
            let r = partial_trace(&rho, &[2, dim], 0).unwrap();
            let t = partial_trace(&tau, &[2, dim], 0).unwrap();
            prop_assert!(purified_distance(&r, &t) <= before + 1e-7);
            let sigma = random_density(2 * dim, &mut rng);
            let pr = pinching(sigma.op(), &rho, CLUSTER_TOL).unwrap();
            let pt = pinching(sigma.op(), &tau, CLUSTER_TOL).unwrap();
            prop_assert!(purified_distance(&pr, &pt) <= before + 1e-7);
        }

        #[test]
        fn fuchs_van_de_graaf(dim in 2usize..=4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_density(dim, &mut rng);
            let tau = random_density(dim, &mut rng);
            let d = trace_distance(&rho, &tau);
            let p = purified_distance(&rho, &tau);
            prop_assert!(d <= p + 1e-9);
            prop_assert!(p <= (2.0 * d).sqrt() + 1e-9);
        }
    }
}
