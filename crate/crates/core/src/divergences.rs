//! Relative-entropy moments, Nussbaum–Szkoła pairs and the information
//! spectrum relative entropy `D_s^ε`.
//!
//! `D_s^ε(P‖Q) = sup{R : P{Z ≤ R} ≤ ε}` with `Z = log P − log Q`. On atoms
//! the supremum is the llr value at which the cumulative mass first becomes
//! strictly larger than ε.

use crate::linalg::{
    eig_hermitian, matrix_fn, nonneg_projector, support_projector, HermitianOperator, LinalgError,
    MatrixFn,
};
use crate::states::{eigenspaces, partial_trace_op, DensityOperator, StateError};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Berry–Esseen constant used throughout.
pub const BERRY_ESSEEN_C: f64 = 0.5;

/// Default lattice rounding tolerance in bits.
pub const LATTICE_TOL: f64 = 1e-9;

/// Largest number of lattice points in [`ds_iid_lattice`].
pub const MAX_LATTICE_POINTS: usize = 10_000_000;

/// Relative tolerance for merging llr atoms that differ only by round-off.
const ATOM_MERGE_TOL: f64 = 1e-12;

/// Mass comparisons `cum > ε` ignore excesses below this.
const MASS_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DivergenceError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("epsilon {0} outside the admissible range")]
    BadEpsilon(f64),
    #[error("p is not a probability vector (sum {0})")]
    NotProbability(f64),
    #[error("weight vectors have different lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("negative or non-finite weight at index {0}")]
    BadWeight(usize),
    #[error("expected at most {expected} distinct llr values, found {found}")]
    TooManyValues { expected: usize, found: usize },
    #[error("lattice needs {0} points, more than the limit")]
    LatticeBlowUp(usize),
    #[error("dimension mismatch {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, DivergenceError>;

/// A probability vector `p` and a weight vector `q` on the same index set.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalPair {
    p: Vec<f64>,
    q: Vec<f64>,
    /// `log2 p_i − log2 q_i` where `p_i > 0` (`+∞` where `q_i = 0`), `NaN` off `supp(p)`.
    llr: Vec<f64>,
}

impl ClassicalPair {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(DivergenceError::LengthMismatch(p.len(), q.len()));
        }
        for (i, (&a, &b)) in p.iter().zip(&q).enumerate() {
            if !(a >= 0.0 && a.is_finite() && b >= 0.0 && b.is_finite()) {
                return Err(DivergenceError::BadWeight(i));
            }
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(DivergenceError::NotProbability(total));
        }
        let llr = p
            .iter()
            .zip(&q)
            .map(|(&a, &b)| {
                if a == 0.0 {
                    f64::NAN
                } else if b == 0.0 {
                    f64::INFINITY
                } else {
                    a.log2() - b.log2()
                }
            })
            .collect();
        Ok(Self { p, q, llr })
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// True if some `p_i > 0` has `q_i = 0`.
    pub fn is_infinite_divergence(&self) -> bool {
        self.llr.contains(&f64::INFINITY)
    }

    /// `(llr, mass)` on `supp(p)`, ascending in llr, with numerically equal
    /// values merged.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        let mut raw: Vec<(f64, f64)> = self
            .llr
            .iter()
            .zip(&self.p)
            .filter(|(_, &m)| m > 0.0)
            .map(|(&z, &m)| (z, m))
            .collect();
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (z, m) in raw {
            match out.last_mut() {
                Some((lz, lm))
                    if z.is_finite() && (z - *lz).abs() <= ATOM_MERGE_TOL * z.abs().max(1.0) =>
                {
                    *lm += m
                }
                Some((lz, lm)) if z.is_infinite() && lz.is_infinite() => *lm += m,
                _ => out.push((z, m)),
            }
        }
        out
    }

    pub fn moments(&self) -> MomentTriple {
        if self.is_infinite_divergence() {
            return MomentTriple {
                d: f64::INFINITY,
                v: f64::INFINITY,
                t: f64::INFINITY,
            };
        }
        let atoms = self.atoms();
        let d: f64 = atoms.iter().map(|(z, m)| m * z).sum();
        let v: f64 = atoms.iter().map(|(z, m)| m * (z - d).powi(2)).sum();
        let t3: f64 = atoms.iter().map(|(z, m)| m * (z - d).abs().powi(3)).sum();
        MomentTriple::new(d, v, t3.cbrt())
    }

    /// Product pair on the index set `self × other` (lexicographic).
    pub fn product(&self, other: &ClassicalPair) -> ClassicalPair {
        let mut p = Vec::with_capacity(self.len() * other.len());
        let mut q = Vec::with_capacity(self.len() * other.len());
        for i in 0..self.len() {
            for j in 0..other.len() {
                p.push(self.p[i] * other.p[j]);
                q.push(self.q[i] * other.q[j]);
            }
        }
        let total: f64 = p.iter().sum();
        for x in &mut p {
            *x /= total;
        }
        ClassicalPair::new(p, q).expect("product of valid pairs")
    }

    /// `Q ↦ 2^{shift} Q`.
    pub fn scale_q(&self, factor: f64) -> ClassicalPair {
        ClassicalPair::new(self.p.clone(), self.q.iter().map(|x| x * factor).collect())
            .expect("scaling keeps weights valid")
    }
}

/// Relative entropy `D`, information variance `V` and the third-moment root
/// `T`, all in bits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentTriple {
    pub d: f64,
    pub v: f64,
    pub t: f64,
}

impl MomentTriple {
    pub fn new(d: f64, v: f64, t: f64) -> Self {
        let v = v.max(0.0);
        let t = if v == 0.0 { 0.0 } else { t.max(0.0) };
        Self { d, v, t }
    }

    pub fn s(&self) -> f64 {
        self.v.sqrt()
    }
}

/// `H(A|B)`, `V(A|B)` and `T` of the Nussbaum–Szkoła pair for `(ρ_AB, 1_A ⊗ ρ_B)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionalMoments {
    pub h: f64,
    pub v: f64,
    pub t: f64,
}

/// `P(x,y) = r_x |⟨v_x|u_y⟩|²`, `Q(x,y) = s_y |⟨v_x|u_y⟩|²` over all `d²`
/// index pairs, with index `x·d + y`.
pub fn nussbaum_szkola(rho: &DensityOperator, sigma: &HermitianOperator) -> Result<ClassicalPair> {
    if rho.dim() != sigma.dim() {
        return Err(DivergenceError::DimensionMismatch(rho.dim(), sigma.dim()));
    }
    let er = eig_hermitian(rho.op());
    let es = eig_hermitian(sigma);
    let d = rho.dim();
    let zr = er.support_threshold();
    let zs = es.support_threshold();
    let tr = rho.trace();
    let mut p = Vec::with_capacity(d * d);
    let mut q = Vec::with_capacity(d * d);
    let overlaps = er.eigenvectors.adjoint() * &es.eigenvectors;
    for x in 0..d {
        let r = if er.eigenvalues[x] > zr { er.eigenvalues[x] / tr } else { 0.0 };
        for y in 0..d {
            let s = if es.eigenvalues[y] > zs { es.eigenvalues[y] } else { 0.0 };
            let w = overlaps[(x, y)].norm_sqr();
            p.push(r * w);
            q.push(s * w);
        }
    }
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    ClassicalPair::new(p, q)
}

/// Classical pair of the commuting pair `(E_σ(ρ), σ)`: eigenvalues of each
/// pinched block of ρ against the eigenvalue of σ on that block.
pub fn pinched_pair(
    rho: &DensityOperator,
    sigma: &HermitianOperator,
    cluster_tol: f64,
) -> Result<ClassicalPair> {
    if rho.dim() != sigma.dim() {
        return Err(DivergenceError::DimensionMismatch(rho.dim(), sigma.dim()));
    }
    let tr = rho.trace();
    let mut p = Vec::with_capacity(rho.dim());
    let mut q = Vec::with_capacity(rho.dim());
    for space in eigenspaces(sigma, cluster_tol) {
        let block = HermitianOperator::symmetrized(
            space.basis.adjoint() * rho.op().matrix() * &space.basis,
        );
        let es = eig_hermitian(&block);
        for &r in &es.eigenvalues {
            p.push((r / tr).max(0.0));
            q.push(space.value.max(0.0));
        }
    }
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    ClassicalPair::new(p, q)
}

/// D and V from the operator formulas, T from the Nussbaum–Szkoła pair.
/// Returns infinite moments when `supp ρ ⊄ supp σ`.
pub fn quantum_moments(rho: &DensityOperator, sigma: &HermitianOperator) -> Result<MomentTriple> {
    if rho.dim() != sigma.dim() {
        return Err(DivergenceError::DimensionMismatch(rho.dim(), sigma.dim()));
    }
    let pi = support_projector(sigma);
    let outside = rho.trace() - rho.op().inner(&pi);
    if outside > 1e-12 {
        return Ok(MomentTriple {
            d: f64::INFINITY,
            v: f64::INFINITY,
            t: f64::INFINITY,
        });
    }
    let tr = rho.trace();
    let r = rho.op().scale(1.0 / tr);
    let l = matrix_fn(&r, MatrixFn::Log2)?.sub(&matrix_fn(sigma, MatrixFn::Log2)?);
    let rl = r.matrix() * l.matrix();
    let d: f64 = (0..r.dim()).map(|i| rl[(i, i)].re).sum();
    let rll = &rl * l.matrix();
    let second: f64 = (0..r.dim()).map(|i| rll[(i, i)].re).sum();
    let v = second - d * d;
    let t = nussbaum_szkola(rho, sigma)?.moments().t;
    Ok(MomentTriple::new(d, v, t))
}

/// `σ = 1_A ⊗ ρ_B` for `ρ_AB` with `dims = [d_A, d_B]`.
pub fn conditional_reference(rho_ab: &HermitianOperator, dims: [usize; 2]) -> Result<HermitianOperator> {
    let rho_b = partial_trace_op(rho_ab, &dims, 0)?;
    Ok(HermitianOperator::identity(dims[0]).kron(&rho_b))
}

pub fn conditional_moments(rho_ab: &DensityOperator, dims: [usize; 2]) -> Result<ConditionalMoments> {
    let sigma = conditional_reference(rho_ab.op(), dims)?;
    let m = quantum_moments(rho_ab, &sigma)?;
    Ok(ConditionalMoments {
        h: -m.d,
        v: m.v,
        t: m.t,
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(DivergenceError::BadEpsilon(eps));
    }
    Ok(())
}

/// `D_s^ε(P‖Q)` by accumulating sorted llr atoms. `+∞` if the first atom
/// whose cumulative mass exceeds ε has infinite llr.
pub fn ds_classical(pair: &ClassicalPair, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let mut cum = 0.0;
    for (z, m) in pair.atoms() {
        cum += m;
        if cum > eps + MASS_TOL {
            return Ok(z);
        }
    }
    // Only reachable through round-off in the total mass.
    Ok(pair.atoms().last().map_or(f64::INFINITY, |a| a.0))
}

// ---- binomial distribution ----

/// `ln(n!) − ln(√(2πn) (n/e)^n)`.
fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        let lfact: f64 = (1..=n as u64).map(|k| (k as f64).ln()).sum();
        return lfact - (n + 0.5) * n.ln() + n - 0.5 * (2.0 * std::f64::consts::PI).ln();
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x/m) + m − x`, evaluated without cancellation.
fn bd0(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// Binomial point mass `P{K = k}` with relative accuracy near machine precision.
pub fn binomial_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    let q = 1.0 - p;
    let (nf, kf) = (n as f64, k as f64);
    if k == 0 {
        let lc = if p < 0.1 { -bd0(nf, nf * q) - nf * p } else { nf * q.ln() };
        return lc.exp();
    }
    if k == n {
        let lc = if q < 0.1 { -bd0(nf, nf * p) - nf * q } else { nf * p.ln() };
        return lc.exp();
    }
    let lc = stirlerr(nf) - stirlerr(kf) - stirlerr(nf - kf) - bd0(kf, nf * p) - bd0(nf - kf, nf * q);
    let lf = (2.0 * std::f64::consts::PI).ln() + kf.ln() + (-kf / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

/// Lentz continued fraction of the regularized incomplete beta function,
/// normalized so that `I_x(a, b) = x^a (1−x)^b / (a B(a,b)) · cf`.
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000_000u64 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// `P{K ≥ k}` computed from the continued fraction; accurate when `k` lies
/// at or above the mean.
fn upper_tail_cf(k: u64, n: u64, p: f64) -> f64 {
    let (a, b) = (k as f64, (n - k) as f64 + 1.0);
    binomial_pmf(k, n, p) * (1.0 - p) * beta_cf(p, a, b)
}

/// Returns `(P{K ≤ k}, P{K > k})`, each computed directly when it is the
/// smaller tail.
fn binomial_tails(k: u64, n: u64, p: f64) -> (f64, f64) {
    if k >= n {
        return (1.0, 0.0);
    }
    // P{K > k} = P{K ≥ k+1} = I_p(k+1, n−k).
    let a = (k + 1) as f64;
    let b = (n - k) as f64;
    if p < (a + 1.0) / (a + b + 2.0) {
        let sf = upper_tail_cf(k + 1, n, p);
        (1.0 - sf, sf)
    } else {
        // P{K ≤ k} = P{n − K ≥ n − k} with success probability 1 − p.
        let cdf = upper_tail_cf(n - k, n, 1.0 - p);
        (cdf, 1.0 - cdf)
    }
}

/// `P{K ≤ k}` for `K ~ Bin(n, p)`.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> f64 {
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return if k >= n { 1.0 } else { 0.0 };
    }
    binomial_tails(k, n, p).0.clamp(0.0, 1.0)
}

/// `P{K > k}` for `K ~ Bin(n, p)`.
pub fn binomial_sf(k: u64, n: u64, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return if k >= n { 0.0 } else { 1.0 };
    }
    binomial_tails(k, n, p).1.clamp(0.0, 1.0)
}

/// Exceedance level for `D_s`. `Tail(τ)` stands for ε = 1 − τ and keeps
/// full precision when ε is within 1e-12 of one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Level {
    Eps(f64),
    Tail(f64),
}

impl Level {
    fn validate(self) -> Result<()> {
        match self {
            Level::Eps(e) => check_eps(e),
            Level::Tail(t) if t > 0.0 && t <= 1.0 => Ok(()),
            Level::Tail(t) => Err(DivergenceError::BadEpsilon(1.0 - t)),
        }
    }

    /// Whether `P{S < k·step}`-style mass `(cdf, sf)` stays within the level.
    fn admits(self, cdf: f64, sf: f64) -> bool {
        match self {
            Level::Eps(e) => cdf <= e + MASS_TOL,
            Level::Tail(t) => sf >= t - MASS_TOL * t,
        }
    }
}

/// Exact `D_s^ε(Pⁿ‖Qⁿ)` for a pair whose llr takes at most two values on
/// `supp(P)`. With `K` the number of draws landing on the larger value,
/// `D_s = k*·(z_hi − z_lo) + n·z_lo` and `k* = max{k : F(k−1) ≤ ε}`.
pub fn ds_iid_exact(pair: &ClassicalPair, n: u64, eps: f64) -> Result<f64> {
    ds_iid_exact_level(pair, n, Level::Eps(eps))
}

pub fn ds_iid_exact_level(pair: &ClassicalPair, n: u64, level: Level) -> Result<f64> {
    level.validate()?;
    let atoms = pair.atoms();
    match atoms.len() {
        0 => Err(DivergenceError::NotProbability(0.0)),
        1 => Ok(if atoms[0].0.is_infinite() {
            f64::INFINITY
        } else {
            n as f64 * atoms[0].0
        }),
        2 => {
            let (z_lo, _) = atoms[0];
            let (z_hi, m_hi) = atoms[1];
            let p_hi = m_hi / (atoms[0].1 + m_hi);
            // admits(k) ⇔ F(k−1) ≤ ε; monotone decreasing in k, true at k = 0.
            let admits = |k: u64| {
                if k == 0 {
                    true
                } else {
                    let (cdf, sf) = binomial_tails(k - 1, n, p_hi);
                    level.admits(cdf, sf)
                }
            };
            let (mut lo, mut hi) = (0u64, n + 1);
            // invariant: admits(lo), !admits(hi) (F(n) = 1 > ε)
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if admits(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let k = lo;
            if z_hi.is_infinite() {
                return Ok(if k == 0 { n as f64 * z_lo } else { f64::INFINITY });
            }
            Ok(k as f64 * (z_hi - z_lo) + n as f64 * z_lo)
        }
        found => Err(DivergenceError::TooManyValues { expected: 2, found }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeResult {
    pub value: f64,
    /// `n · max_i |z_i − rounded z_i|`.
    pub rounding_bound: f64,
    pub spacing: f64,
}

fn approx_gcd(mut a: f64, mut b: f64, tol: f64) -> f64 {
    if a < b {
        std::mem::swap(&mut a, &mut b);
    }
    while b > tol {
        let r = a % b;
        a = b;
        b = if b - r < tol { 0.0 } else { r };
    }
    a
}

/// `D_s^ε(Pⁿ‖Qⁿ)` for up to six distinct finite llr values, by rounding
/// them to a common lattice and convolving the distribution of the sum.
pub fn ds_iid_lattice(pair: &ClassicalPair, n: usize, eps: f64, lattice_tol: f64) -> Result<LatticeResult> {
    check_eps(eps)?;
    let atoms = pair.atoms();
    if atoms.len() > 6 {
        return Err(DivergenceError::TooManyValues {
            expected: 6,
            found: atoms.len(),
        });
    }
    if atoms.iter().any(|a| a.0.is_infinite()) {
        return Err(DivergenceError::TooManyValues {
            expected: 6,
            found: atoms.len(),
        });
    }
    let z0 = atoms[0].0;
    let diffs: Vec<f64> = atoms.iter().map(|a| a.0 - z0).collect();
    let mut spacing = 0.0;
    for &d in &diffs[1..] {
        spacing = if spacing == 0.0 { d } else { approx_gcd(spacing, d, lattice_tol) };
    }
    let spacing = spacing.max(lattice_tol);
    let steps: Vec<usize> = diffs.iter().map(|d| (d / spacing).round() as usize).collect();
    let max_step = *steps.iter().max().unwrap_or(&0);
    let points = n.saturating_mul(max_step).saturating_add(1);
    if points > MAX_LATTICE_POINTS {
        return Err(DivergenceError::LatticeBlowUp(points));
    }
    let err = diffs
        .iter()
        .zip(&steps)
        .map(|(d, &s)| (d - s as f64 * spacing).abs())
        .fold(0.0, f64::max);
    let mut dist = vec![0.0f64; points];
    dist[0] = 1.0;
    let mut len = 1;
    for _ in 0..n {
        let mut next = vec![0.0f64; points];
        for (i, &w) in dist[..len].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (a, &s) in atoms.iter().zip(&steps) {
                next[i + s] += w * a.1;
            }
        }
        len += max_step;
        dist = next;
    }
    let mut cum = 0.0;
    let mut idx = len - 1;
    for (i, &w) in dist[..len].iter().enumerate() {
        cum += w;
        if cum > eps + MASS_TOL {
            idx = i;
            break;
        }
    }
    Ok(LatticeResult {
        value: n as f64 * z0 + idx as f64 * spacing,
        rounding_bound: n as f64 * err,
        spacing,
    })
}

// ---- Gaussian ----

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn gaussian_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// `Φ⁻¹(ε)`, `∓∞` at the endpoints, polished by one Newton step.
pub fn gaussian_quantile(eps: f64) -> f64 {
    if eps <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if eps >= 1.0 {
        return f64::INFINITY;
    }
    let x = std_normal().inverse_cdf(eps);
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if pdf > 0.0 {
        x - (gaussian_cdf(x) - eps) / pdf
    } else {
        x
    }
}

/// `nD + √(nV)·Φ⁻¹(ε)`.
pub fn second_order(d: f64, v: f64, n: f64, eps: f64) -> f64 {
    if v == 0.0 {
        return n * d;
    }
    n * d + (n * v).sqrt() * gaussian_quantile(eps)
}

/// Berry–Esseen sandwich for `D_s^ε` of an n-fold i.i.d. pair with moments `m`:
/// `nD + √(nV)·Φ⁻¹(ε ∓ C t³/(s³√n))`, with `∓∞` outside the domain.
pub fn berry_esseen_ds(m: &MomentTriple, n: f64, eps: f64, c: f64) -> (f64, f64) {
    if m.v == 0.0 {
        return (n * m.d, n * m.d);
    }
    let s = m.v.sqrt();
    let shift = c * m.t.powi(3) / (s.powi(3) * n.sqrt());
    let root = (n * m.v).sqrt();
    let lower = if eps - shift > 0.0 {
        n * m.d + root * gaussian_quantile(eps - shift)
    } else {
        f64::NEG_INFINITY
    };
    let upper = if eps + shift < 1.0 {
        n * m.d + root * gaussian_quantile(eps + shift)
    } else {
        f64::INFINITY
    };
    (lower, upper)
}

// ---- quantum information spectrum ----

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpectrumGrid {
    pub points: usize,
    pub bisections: usize,
}

impl Default for SpectrumGrid {
    fn default() -> Self {
        Self {
            points: 4096,
            bisections: 40,
        }
    }
}

/// `g(R) = tr ρ {2^R σ − ρ ≥ 0}` tabulated on a grid, reusable across ε.
#[derive(Clone, Debug)]
pub struct QuantumSpectrum {
    rho: HermitianOperator,
    sigma: HermitianOperator,
    grid: Vec<f64>,
    values: Vec<f64>,
    bisections: usize,
}

impl QuantumSpectrum {
    pub fn new(rho: &DensityOperator, sigma: &HermitianOperator, grid: SpectrumGrid) -> Result<Self> {
        if rho.dim() != sigma.dim() {
            return Err(DivergenceError::DimensionMismatch(rho.dim(), sigma.dim()));
        }
        let pos = |h: &HermitianOperator| {
            let es = eig_hermitian(h);
            let tol = es.support_threshold();
            let v: Vec<f64> = es.eigenvalues.into_iter().filter(|&x| x > tol).collect();
            v
        };
        let r = pos(rho.op());
        let s = pos(sigma);
        let (lo, hi) = match (r.first(), r.last(), s.first(), s.last()) {
            (Some(&r_min), Some(&r_max), Some(&s_min), Some(&s_max)) => (
                r_min.log2() - s_max.log2() - 4.0,
                r_max.log2() - s_min.log2() + 4.0,
            ),
            _ => (-4.0, 4.0),
        };
        let points = grid.points.max(2);
        let step = (hi - lo) / (points - 1) as f64;
        let grid_pts: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
        let rho_op = rho.op().clone();
        let values = grid_pts
            .iter()
            .map(|&x| g_value(&rho_op, sigma, x))
            .collect();
        Ok(Self {
            rho: rho_op,
            sigma: sigma.clone(),
            grid: grid_pts,
            values,
            bisections: grid.bisections,
        })
    }

    pub fn g(&self, r: f64) -> f64 {
        g_value(&self.rho, &self.sigma, r)
    }

    /// `D_s^ε(ρ‖σ)`: the largest grid point with `g ≤ ε`, refined by
    /// bisection towards the next grid point.
    pub fn ds(&self, eps: f64) -> Result<f64> {
        check_eps(eps)?;
        let ok = |v: f64| v <= eps + MASS_TOL;
        let Some(last) = self.values.iter().rposition(|&v| ok(v)) else {
            return Ok(f64::NEG_INFINITY);
        };
        if last + 1 == self.grid.len() {
            return Ok(f64::INFINITY);
        }
        let (mut lo, mut hi) = (self.grid[last], self.grid[last + 1]);
        for _ in 0..self.bisections {
            let mid = 0.5 * (lo + hi);
            if ok(self.g(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }
}

fn g_value(rho: &HermitianOperator, sigma: &HermitianOperator, r: f64) -> f64 {
    let a = sigma.scale(r.exp2()).sub(rho);
    rho.inner(&nonneg_projector(&a))
}

pub fn ds_quantum(
    rho: &DensityOperator,
    sigma: &HermitianOperator,
    eps: f64,
    grid: SpectrumGrid,
) -> Result<f64> {
    QuantumSpectrum::new(rho, sigma, grid)?.ds(eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{random_density, tensor_power, CLUSTER_TOL};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(p: &[f64], q: &[f64]) -> ClassicalPair {
        ClassicalPair::new(p.to_vec(), q.to_vec()).unwrap()
    }

    fn diag(p: &[f64]) -> DensityOperator {
        DensityOperator::from_diagonal(p).unwrap()
    }

    #[test]
    fn ds_classical_examples() {
        let pq = pair(&[0.3, 0.7], &[0.3, 0.7]);
        for eps in [0.0, 0.2, 0.5, 0.99] {
            assert_eq!(ds_classical(&pq, eps).unwrap(), 0.0);
        }
        let pq = pair(&[0.3, 0.7], &[0.6, 0.4]);
        assert!((ds_classical(&pq, 0.2).unwrap() + 1.0).abs() < 1e-15);
        let z = (0.7f64 / 0.4).log2();
        assert!((ds_classical(&pq, 0.4).unwrap() - z).abs() < 1e-15);
        assert!((z - 0.80735).abs() < 1e-5);
        // cumulative mass equal to ε moves on to the next atom
        assert!((ds_classical(&pq, 0.3).unwrap() - z).abs() < 1e-15);
        assert!(ds_classical(&pq, 1.0).is_err());

        let inf = pair(&[0.3, 0.7], &[1.0, 0.0]);
        assert!(inf.is_infinite_divergence());
        assert_eq!(ds_classical(&inf, 0.3).unwrap(), f64::INFINITY);
        assert!((ds_classical(&inf, 0.2).unwrap() - 0.3f64.log2()).abs() < 1e-15);
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial_cdf(10, 10, 0.5), 1.0);
        assert!((binomial_cdf(4, 10, 0.5) - 386.0 / 1024.0).abs() < 1e-15);
        // exact rational summation for a skewed case
        let mut exact = 0.0;
        let mut coef = 1.0f64;
        for k in 0..=7u64 {
            if k > 0 {
                coef = coef * (30 - k + 1) as f64 / k as f64;
            }
            exact += coef * 0.2f64.powi(k as i32) * 0.8f64.powi(30 - k as i32);
        }
        assert!((binomial_cdf(7, 30, 0.2) / exact - 1.0).abs() < 1e-12);
        assert!(((1.0 - binomial_sf(7, 30, 0.2)) / exact - 1.0).abs() < 1e-12);
        // pmf against the same exact weights
        let pmf_exact = 30.0 * 29.0 / 2.0 * 0.2f64.powi(2) * 0.8f64.powi(28);
        assert!((binomial_pmf(2, 30, 0.2) / pmf_exact - 1.0).abs() < 1e-13);
    }

    #[test]
    fn binomial_gaussian_bulk() {
        let n = 1_000_000u64;
        let p = 0.05;
        let mean = n as f64 * p;
        let sd = (mean * (1.0 - p)).sqrt();
        for dev in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let k = (mean + dev * sd).floor() as u64;
            let approx = gaussian_cdf((k as f64 + 0.5 - mean) / sd);
            let exact = binomial_cdf(k, n, p);
            assert!((exact / approx - 1.0).abs() < 5e-3, "dev {dev}: {exact} vs {approx}");
        }
    }

    #[test]
    fn binomial_tails_complement() {
        for &(n, p) in &[(50u64, 0.3), (1000, 0.05), (100_000_000, 0.05)] {
            let mean = n as f64 * p;
            for k in [(mean * 0.9) as u64, mean as u64, (mean * 1.1) as u64] {
                let s = binomial_cdf(k, n, p) + binomial_sf(k, n, p);
                assert!((s - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gaussian_examples() {
        assert!((gaussian_cdf(0.0) - 0.5).abs() < 1e-16);
        assert_eq!(gaussian_quantile(0.5), 0.0);
        assert!((gaussian_quantile(1e-12) + 7.034483825).abs() < 1e-6);
        for &e in &[1e-12, 1e-9, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.999] {
            assert!((gaussian_cdf(gaussian_quantile(e)) - e).abs() <= 1e-12 * e.max(1e-3));
        }
        for i in 0..50 {
            let x = -6.0 + 0.25 * i as f64;
            assert!((gaussian_cdf(-x) - (1.0 - gaussian_cdf(x))).abs() < 1e-15);
        }
        assert_eq!(gaussian_quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(gaussian_quantile(1.0), f64::INFINITY);
    }

    #[test]
    fn second_order_examples() {
        assert_eq!(second_order(0.7, 0.9, 100.0, 0.5), 70.0);
        assert_eq!(second_order(0.7, 0.0, 100.0, 0.1), 70.0);
        assert!(second_order(0.7, 0.9, 100.0, 0.4) < 70.0);
        assert!(second_order(0.7, 0.9, 100.0, 0.6) > 70.0);
    }

    #[test]
    fn berry_esseen_examples() {
        let m = MomentTriple::new(0.3, 0.0, 0.0);
        assert_eq!(berry_esseen_ds(&m, 50.0, 0.1, 0.5), (15.0, 15.0));
        let m = MomentTriple::new(0.3, 1.0, 1.0);
        let (lo, hi) = berry_esseen_ds(&m, 1.0, 0.5, 0.5);
        assert_eq!((lo, hi), (f64::NEG_INFINITY, f64::INFINITY));
    }

    #[test]
    fn iid_exact_matches_classical_and_enumeration() {
        let pq = pair(&[0.3, 0.7], &[0.6, 0.4]);
        for &eps in &[0.0, 0.1, 0.3, 0.5, 0.9] {
            let a = ds_iid_exact(&pq, 1, eps).unwrap();
            assert!((a - ds_classical(&pq, eps).unwrap()).abs() < 1e-12);
        }
        let mut prod = pq.clone();
        for n in 2..=6u64 {
            prod = prod.product(&pq);
            for &eps in &[0.05, 0.2, 0.5, 0.8] {
                let a = ds_iid_exact(&pq, n, eps).unwrap();
                let b = ds_classical(&prod, eps).unwrap();
                assert!((a - b).abs() < 1e-9, "n {n} eps {eps}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn iid_exact_symmetric_median() {
        let pq = pair(&[0.5, 0.5], &[0.25, 0.75]);
        let atoms = pq.atoms();
        let step = atoms[1].0 - atoms[0].0;
        for n in [1u64, 3, 5, 7, 9] {
            let mean = n as f64 * 0.5 * (atoms[0].0 + atoms[1].0);
            let v = ds_iid_exact(&pq, n, 0.5).unwrap();
            assert!((v - mean).abs() <= 0.5 * step + 1e-12);
        }
    }

    #[test]
    fn lattice_agrees_with_exact_and_enumeration() {
        let pq = pair(&[0.3, 0.7], &[0.6, 0.4]);
        for &eps in &[0.1, 0.4, 0.7] {
            let lat = ds_iid_lattice(&pq, 20, eps, LATTICE_TOL).unwrap();
            let exact = ds_iid_exact(&pq, 20, eps).unwrap();
            assert!((lat.value - exact).abs() <= lat.rounding_bound + 1e-9);
        }
        // llr values −1, 0, 1
        let tri = pair(&[0.2, 0.3, 0.5], &[0.4, 0.3, 0.25]);
        let prod = tri.product(&tri);
        for &eps in &[0.0, 0.1, 0.35, 0.6, 0.95] {
            let lat = ds_iid_lattice(&tri, 2, eps, LATTICE_TOL).unwrap();
            let brute = ds_classical(&prod, eps).unwrap();
            assert!((lat.value - brute).abs() <= lat.rounding_bound + 1e-9, "eps {eps}");
        }
        // ε = 0 gives the smallest attainable sum
        let lat = ds_iid_lattice(&tri, 3, 0.0, LATTICE_TOL).unwrap();
        assert!((lat.value + 3.0).abs() < 1e-9);

        // llr values 0, 1 and log2 5 share no common lattice
        let third = 1.0 / 3.0;
        let irrational = pair(&[third, third, third], &[third, third / 2.0, third / 5.0]);
        assert!(matches!(
            ds_iid_lattice(&irrational, 10_000, 0.1, 1e-12),
            Err(DivergenceError::LatticeBlowUp(_))
        ));
    }

    #[test]
    fn ns_plus_state() {
        let s = 1.0 / 2f64.sqrt();
        let plus = DensityOperator::pure(&[crate::linalg::c(s, 0.0), crate::linalg::c(s, 0.0)]).unwrap();
        let sigma = HermitianOperator::identity(2).scale(0.5);
        let ns = nussbaum_szkola(&plus, &sigma).unwrap();
        let mut p = ns.p().to_vec();
        p.sort_by(|a, b| b.total_cmp(a));
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        assert!(p[2].abs() < 1e-12 && p[3].abs() < 1e-12);
        for q in ns.q() {
            assert!((q - 0.25).abs() < 1e-12);
        }
        assert!((ns.moments().d - 1.0).abs() < 1e-12);
        assert!((quantum_moments(&plus, &sigma).unwrap().d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn commuting_moments_match_summation() {
        let p = [0.1, 0.2, 0.7];
        let q = [0.3, 0.3, 0.4];
        let m = quantum_moments(&diag(&p), &HermitianOperator::from_real_diagonal(&q)).unwrap();
        let d: f64 = (0..3).map(|i| p[i] * (p[i] / q[i]).log2()).sum();
        let v: f64 = (0..3).map(|i| p[i] * ((p[i] / q[i]).log2() - d).powi(2)).sum();
        let t: f64 = (0..3).map(|i| p[i] * ((p[i] / q[i]).log2() - d).abs().powi(3)).sum::<f64>().cbrt();
        assert!((m.d - d).abs() < 1e-12);
        assert!((m.v - v).abs() < 1e-12);
        assert!((m.t - t).abs() < 1e-12);

        let same = quantum_moments(&diag(&p), &HermitianOperator::from_real_diagonal(&p)).unwrap();
        assert!(same.d.abs() < 1e-12 && same.v.abs() < 1e-12 && same.t.abs() < 1e-6);

        let bad = quantum_moments(&diag(&[0.5, 0.5]), &HermitianOperator::from_real_diagonal(&[1.0, 0.0])).unwrap();
        assert!(bad.d.is_infinite());
    }

    #[test]
    fn conditional_examples() {
        let mixed = DensityOperator::maximally_mixed(4);
        let c = conditional_moments(&mixed, [4, 1]).unwrap();
        assert!((c.h - 2.0).abs() < 1e-12 && c.v.abs() < 1e-12);

        // classical joint distribution p(a, b)
        let pab = [0.1, 0.2, 0.3, 0.4];
        let c = conditional_moments(&diag(&pab), [2, 2]).unwrap();
        let pb = [pab[0] + pab[2], pab[1] + pab[3]];
        let h: f64 = (0..4).map(|i| -pab[i] * (pab[i] / pb[i % 2]).log2()).sum();
        assert!((c.h - h).abs() < 1e-12);
    }

    #[test]
    fn iid_factorization_of_ns() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rho = random_density(2, &mut rng);
        let sigma = random_density(2, &mut rng);
        let single = nussbaum_szkola(&rho, sigma.op()).unwrap();
        let double = nussbaum_szkola(
            &tensor_power(&rho, 2).unwrap(),
            tensor_power(&sigma, 2).unwrap().op(),
        )
        .unwrap();
        // degenerate eigenspaces of ρ⊗ρ make individual entries basis
        // dependent; the (llr, mass) multiset is not
        let a = single.product(&single).atoms();
        let b = double.atoms();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x.0 - y.0).abs() < 1e-10 && (x.1 - y.1).abs() < 1e-10);
        }
    }

    #[test]
    fn ds_quantum_commuting_and_identical() {
        let p = [0.2, 0.3, 0.5];
        let q = [0.5, 0.25, 0.25];
        let pq = pair(&p, &q);
        let qs = QuantumSpectrum::new(&diag(&p), &HermitianOperator::from_real_diagonal(&q), SpectrumGrid::default()).unwrap();
        for &eps in &[0.1, 0.25, 0.6, 0.9] {
            let a = qs.ds(eps).unwrap();
            let b = ds_classical(&pq, eps).unwrap();
            assert!((a - b).abs() < 1e-9, "eps {eps}: {a} vs {b}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = random_density(3, &mut rng);
        for &eps in &[0.05, 0.5, 0.95] {
            let v = ds_quantum(&rho, rho.op(), eps, SpectrumGrid::default()).unwrap();
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn ds_scaling_relation() {
        let pq = pair(&[0.2, 0.3, 0.5], &[0.5, 0.25, 0.25]);
        let lam: f64 = 1.7;
        let shifted = pq.scale_q((-lam).exp2());
        for &eps in &[0.1, 0.4, 0.8] {
            let a = ds_classical(&shifted, eps).unwrap();
            let b = ds_classical(&pq, eps).unwrap() + lam;
            assert!((a - b).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rho = random_density(2, &mut rng);
        let sigma = random_density(2, &mut rng);
        let base = ds_quantum(&rho, sigma.op(), 0.3, SpectrumGrid::default()).unwrap();
        let scaled = ds_quantum(&rho, &sigma.op().scale((-lam).exp2()), 0.3, SpectrumGrid::default()).unwrap();
        assert!((scaled - base - lam).abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn moment_matching(dim in 2usize..=4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_density(dim, &mut rng);
            let sigma = random_density(dim, &mut rng);
            let q = quantum_moments(&rho, sigma.op()).unwrap();
            let c = nussbaum_szkola(&rho, sigma.op()).unwrap().moments();
            prop_assert!((q.d - c.d).abs() <= 1e-10);
            prop_assert!((q.v - c.v).abs() <= 1e-10);
        }

        #[test]
        fn ds_classical_monotone(seed in any::<u64>(), k in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = crate::states::random_simplex(k, &mut rng);
            let q = crate::states::random_simplex(k, &mut rng);
            let pq = pair(&p, &q);
            let mut prev = f64::NEG_INFINITY;
            for i in 0..20 {
                let v = ds_classical(&pq, i as f64 / 20.0).unwrap();
                prop_assert!(v >= prev);
                prev = v;
            }
        }

        #[test]
        fn commuting_spectrum_unified(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = crate::states::random_simplex(3, &mut rng);
            let q = crate::states::random_simplex(3, &mut rng);
            let rho = diag(&p);
            let sigma = HermitianOperator::from_real_diagonal(&q);
            let ns = nussbaum_szkola(&rho, &sigma).unwrap();
            let pinched = crate::states::pinching(&sigma, &rho, CLUSTER_TOL).unwrap();
            let ds_pinched = ds_quantum(&pinched, &sigma, 0.3, SpectrumGrid::default()).unwrap();
            let ds_ns = ds_classical(&ns, 0.3).unwrap();
            let ds_direct = ds_classical(&pair(&p, &q), 0.3).unwrap();
            prop_assert!((ds_ns - ds_direct).abs() < 1e-10);
            prop_assert!((ds_pinched - ds_direct).abs() < 1e-8);
        }
    }
}
