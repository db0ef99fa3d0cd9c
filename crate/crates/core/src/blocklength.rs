//! Finite block length bounds on extractable randomness and compression
//! length for i.i.d. sources, their Gaussian approximations, and the exact
//! binomial pipeline for the Pauli-channel eavesdropping source.

use crate::divergences::{
    conditional_moments, ds_iid_exact_level, gaussian_quantile, nussbaum_szkola, ClassicalPair,
    DivergenceError, Level, BERRY_ESSEEN_C,
};
use crate::format::sig12;
use crate::linalg::{c, HermitianOperator};
use crate::par::Execution;
use crate::states::{support_lambda, CqState, DensityOperator, StateError};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// Entrywise tolerance when checking the Pauli source's closed-form pair.
const PAIR_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BlocklengthError {
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("epsilon {0} outside (0, 1)")]
    BadEpsilon(f64),
    #[error("Pauli phase error {0} outside (0, 1/2)")]
    BadPhaseError(f64),
    #[error("Nussbaum-Szkola pair deviates from the closed form by {0:e}")]
    PairMismatch(f64),
    #[error("source side information has {0} distinct llr values; the exact pipeline needs 2")]
    NotBinary(usize),
    #[error("optimizer grid needs at least 3 points")]
    BadGrid,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BlocklengthError>;

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(BlocklengthError::BadEpsilon(eps))
    }
}

/// One copy of a CQ source with the quantities entering the bounds.
#[derive(Clone, Debug)]
pub struct SourceModel {
    pub cq: CqState,
    /// `H(X|B)` in bits.
    pub h: f64,
    /// `V(X|B)` in bits².
    pub v: f64,
    pub s: f64,
    /// Third absolute central moment root of the llr.
    pub t: f64,
    /// `λ(ρ_B)`.
    pub lambda: f64,
    /// Berry–Esseen constant.
    pub c: f64,
    /// Nussbaum–Szkoła pair of `(ρ_XB, 1_X ⊗ ρ_B)`.
    pub pair: ClassicalPair,
}

impl SourceModel {
    pub fn new(cq: CqState) -> Result<Self> {
        let rho = cq.to_density()?;
        let dims = [cq.num_symbols(), cq.dim_b()];
        let m = conditional_moments(&rho, dims)?;
        let rho_b = cq.marginal_b();
        let reference = HermitianOperator::identity(dims[0]).kron(&rho_b);
        let pair = nussbaum_szkola(&rho, &reference)?;
        Ok(Self {
            h: m.h,
            v: m.v,
            s: m.v.sqrt(),
            t: m.t,
            lambda: support_lambda(&rho_b),
            c: BERRY_ESSEEN_C,
            pair,
            cq,
        })
    }

    pub fn log_alphabet(&self) -> f64 {
        (self.cq.num_symbols() as f64).log2()
    }

    /// `C t³/(√n s³)`, the Berry–Esseen shift; zero for V = 0.
    pub fn shift(&self, n: f64) -> f64 {
        if self.s == 0.0 {
            0.0
        } else {
            self.c * self.t.powi(3) / (n.sqrt() * self.s.powi(3))
        }
    }

    /// `⌈nλ⌉`, at least one.
    fn ceil_n_lambda(&self, n: f64) -> f64 {
        (n * self.lambda).ceil().max(1.0)
    }

    /// `√n s Φ⁻¹(x)`, zero when s = 0.
    fn gauss(&self, n: f64, x: f64) -> f64 {
        if self.s == 0.0 {
            0.0
        } else {
            n.sqrt() * self.s * gaussian_quantile(x)
        }
    }
}

/// `ρ_XB = ½ Σ_x |x⟩⟨x| ⊗ |φ_x⟩⟨φ_x|` with `|φ_x⟩ = √p|0⟩ + (−1)^x √(1−p)|1⟩`.
///
/// The source's pair is checked against `P = {p/2, p/2, (1−p)/2, (1−p)/2}`,
/// `Q = {p², p², (1−p)², (1−p)²}` on the support of P.
pub fn pauli_source(p: f64) -> Result<SourceModel> {
    if !(p > 0.0 && p < 0.5) {
        return Err(BlocklengthError::BadPhaseError(p));
    }
    let phi = |sign: f64| {
        DensityOperator::pure(&[c(p.sqrt(), 0.0), c(sign * (1.0 - p).sqrt(), 0.0)])
    };
    let cq = CqState::new(vec![(0.5, phi(1.0)?), (0.5, phi(-1.0)?)])?;
    let src = SourceModel::new(cq)?;
    let mut got: Vec<(f64, f64)> = src
        .pair
        .p()
        .iter()
        .zip(src.pair.q())
        .filter(|(&a, _)| a > PAIR_TOL)
        .map(|(&a, &b)| (a, b))
        .collect();
    let mut want = vec![
        (p / 2.0, p * p),
        (p / 2.0, p * p),
        ((1.0 - p) / 2.0, (1.0 - p).powi(2)),
        ((1.0 - p) / 2.0, (1.0 - p).powi(2)),
    ];
    got.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    want.sort_by(|a, b| a.0.total_cmp(&b.0));
    if got.len() != want.len() {
        return Err(BlocklengthError::PairMismatch(f64::INFINITY));
    }
    let dev = got
        .iter()
        .zip(&want)
        .map(|(g, w)| (g.0 - w.0).abs().max((g.1 - w.1).abs()))
        .fold(0.0, f64::max);
    if dev > PAIR_TOL {
        return Err(BlocklengthError::PairMismatch(dev));
    }
    Ok(src)
}

/// Gaussian approximation of the minimal compression length,
/// `nH − √(nV) Φ⁻¹(ε)`.
pub fn second_order_m(src: &SourceModel, n: f64, eps: f64) -> f64 {
    n * src.h - src.gauss(n, eps)
}

/// Gaussian approximation of the extractable length, `nH + √(nV) Φ⁻¹(ε²)`.
pub fn second_order_l(src: &SourceModel, n: f64, eps: f64) -> f64 {
    n * src.h + src.gauss(n, eps * eps)
}

/// Log grid plus golden-section refinement for the ξ optimizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiGrid {
    pub points: usize,
    pub golden_steps: usize,
}

impl Default for XiGrid {
    fn default() -> Self {
        Self {
            points: 64,
            golden_steps: 30,
        }
    }
}

/// Smallest offset of the log grid relative to the interval length.
const GRID_DECADES: f64 = 10.0;

/// Maximizes `f` over the open interval `(a, b)`: log-spaced offsets from
/// `a`, then golden-section search between the neighbours of the best grid
/// point. Returns `(argmax, max)`; `max` is `−∞` when f never is finite.
fn maximize_open(a: f64, b: f64, grid: XiGrid, f: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    if grid.points < 3 {
        return Err(BlocklengthError::BadGrid);
    }
    let len = b - a;
    if !(len > 0.0) {
        return Ok((f64::NAN, f64::NEG_INFINITY));
    }
    let last = (grid.points - 1) as f64;
    let xs: Vec<f64> = (0..grid.points)
        .map(|i| a + len * 10f64.powf(-GRID_DECADES * (1.0 - i as f64 / last)))
        .map(|x| x.min(b - len * 1e-12))
        .collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let (best, &fbest) = vals
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("grid is nonempty");
    if fbest == f64::NEG_INFINITY {
        return Ok((f64::NAN, f64::NEG_INFINITY));
    }
    let mut lo = if best == 0 { a + len * 1e-14 } else { xs[best - 1] };
    let mut hi = if best + 1 == xs.len() { xs[best] } else { xs[best + 1] };
    let (mut xbest, mut vbest) = (xs[best], fbest);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..grid.golden_steps {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
        for (x, v) in [(x1, f1), (x2, f2)] {
            if v > vbest {
                xbest = x;
                vbest = v;
            }
        }
    }
    Ok((xbest, vbest))
}

/// Finite-n bounds in bits with the optimizing ξ for each side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FiniteBounds {
    pub lower: f64,
    pub upper: f64,
    pub xi_lower: f64,
    pub xi_upper: f64,
    /// False when n is below the validity threshold; the bounds are then ∓∞.
    pub valid: bool,
}

impl FiniteBounds {
    fn vacuous() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            xi_lower: f64::NAN,
            xi_upper: f64::NAN,
            valid: false,
        }
    }
}

/// Bounds on `m^ε(Xⁿ|Bⁿ)`:
///
/// lower `nH + sup_ξ {−√n s Φ⁻¹(ε+ξ) − log(2⁹⌈nλ⌉ / ((ξ−κ)⁴(1−ε−ξ)))}` over
/// `κ < ξ < 1−ε`, upper `nH + inf_ξ {−√n s Φ⁻¹(ε−ξ) + log(2²3³⌈nλ⌉ / (ξ−κ)³)}`
/// over `κ < ξ < ε`, with `κ = C t³/(√n s³)`. Valid when
/// `κ < min(ε, 1−ε)`.
pub fn m_bounds_finite(src: &SourceModel, n: f64, eps: f64, grid: XiGrid) -> Result<FiniteBounds> {
    check_eps(eps)?;
    let kappa = src.shift(n);
    if kappa >= eps.min(1.0 - eps) {
        log::debug!("n = {n} below the validity threshold for eps = {eps}");
        return Ok(FiniteBounds::vacuous());
    }
    let cl = src.ceil_n_lambda(n);
    let (xl, lower) = maximize_open(kappa, 1.0 - eps, grid, |xi| {
        -src.gauss(n, eps + xi) - (2f64.powi(9) * cl / ((xi - kappa).powi(4) * (1.0 - eps - xi))).log2()
    })?;
    let (xu, neg_upper) = maximize_open(kappa, eps, grid, |xi| {
        src.gauss(n, eps - xi) - (4.0 * 27.0 * cl / (xi - kappa).powi(3)).log2()
    })?;
    Ok(FiniteBounds {
        lower: n * src.h + lower,
        upper: n * src.h - neg_upper,
        xi_lower: xl,
        xi_upper: xu,
        valid: true,
    })
}

/// Bounds on `ℓ^ε(Xⁿ|Bⁿ)`:
///
/// lower `nH + sup_ξ {√n s Φ⁻¹(ε²−ξ) − log(5⁵⌈nλ⌉ / ((ξ−κ)⁵(1−ε)))}` over
/// `κ < ξ < ε²`, upper `nH + inf_ξ {√n s Φ⁻¹(ε²+ξ) + log(2⁸3⁶⌈nλ⌉ / (ξ−κ)⁶)}`
/// over `κ < ξ < 1−ε²`. Valid when `κ < min(ε², 1−ε²)`.
pub fn l_bounds_finite(src: &SourceModel, n: f64, eps: f64, grid: XiGrid) -> Result<FiniteBounds> {
    check_eps(eps)?;
    let e2 = eps * eps;
    let kappa = src.shift(n);
    if kappa >= e2.min(1.0 - e2) {
        log::debug!("n = {n} below the validity threshold for eps = {eps}");
        return Ok(FiniteBounds::vacuous());
    }
    let cl = src.ceil_n_lambda(n);
    let (xl, lower) = maximize_open(kappa, e2, grid, |xi| {
        src.gauss(n, e2 - xi) - (5f64.powi(5) * cl / ((xi - kappa).powi(5) * (1.0 - eps))).log2()
    })?;
    let (xu, neg_upper) = maximize_open(kappa, 1.0 - e2, grid, |xi| {
        -src.gauss(n, e2 + xi) - (2f64.powi(8) * 3f64.powi(6) * cl / (xi - kappa).powi(6)).log2()
    })?;
    Ok(FiniteBounds {
        lower: n * src.h + lower,
        upper: n * src.h - neg_upper,
        xi_lower: xl,
        xi_upper: xu,
        valid: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Extraction,
    Compression,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Extraction => "extraction",
            Task::Compression => "compression",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "extraction" => Ok(Task::Extraction),
            "compression" => Ok(Task::Compression),
            other => Err(format!("unknown task '{other}', expected extraction or compression")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub n: u64,
    pub lower: f64,
    pub upper: f64,
    pub second_order: f64,
    pub shannon: f64,
    pub xi_lower: f64,
    pub xi_upper: f64,
    pub lower_clamped: bool,
    pub upper_clamped: bool,
    /// False when n is below the validity threshold of the bounds.
    pub valid: bool,
}

impl CurvePoint {
    pub fn lower_rate(&self) -> f64 {
        self.lower / self.n as f64
    }

    pub fn upper_rate(&self) -> f64 {
        self.upper / self.n as f64
    }

    pub fn second_order_rate(&self) -> f64 {
        self.second_order / self.n as f64
    }

    /// `+`-joined subset of `vacuous`, `lower`, `upper`, or `none`.
    pub fn flags(&self) -> String {
        let parts: Vec<&str> = [
            (!self.valid, "vacuous"),
            (self.lower_clamped, "lower"),
            (self.upper_clamped, "upper"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCurve {
    pub task: Task,
    pub eps: f64,
    /// Rate of the first-order term, `H(X|B)`.
    pub shannon: f64,
    pub points: Vec<CurvePoint>,
}

pub const CURVE_CSV_HEADER: [&str; 10] = [
    "n",
    "lower_bits",
    "upper_bits",
    "lower_rate",
    "upper_rate",
    "second_order_rate",
    "shannon_rate",
    "xi_lower",
    "xi_upper",
    "clamped_flags",
];

impl BoundCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CURVE_CSV_HEADER)?;
        for p in &self.points {
            w.write_record([
                p.n.to_string(),
                sig12(p.lower),
                sig12(p.upper),
                sig12(p.lower_rate()),
                sig12(p.upper_rate()),
                sig12(p.second_order_rate()),
                sig12(p.shannon),
                sig12(p.xi_lower),
                sig12(p.xi_upper),
                p.flags(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Clamps a bit count into `[0, max]`, reporting whether it moved.
fn clamp_bits(x: f64, max: f64) -> (f64, bool) {
    let y = x.clamp(0.0, max);
    (y, y != x)
}

fn point(src: &SourceModel, n: u64, b: &FiniteBounds, second: f64) -> CurvePoint {
    let (lower, upper, xi) = (b.lower, b.upper, (b.xi_lower, b.xi_upper));
    let max = n as f64 * src.log_alphabet();
    let (lower, lower_clamped) = clamp_bits(lower, max);
    let (upper, upper_clamped) = clamp_bits(upper, max);
    CurvePoint {
        n,
        lower,
        upper,
        second_order: second,
        shannon: src.h,
        xi_lower: xi.0,
        xi_upper: xi.1,
        lower_clamped,
        upper_clamped,
        valid: b.valid,
    }
}

/// General finite-n bounds for each `n`, evaluated independently.
pub fn bounds_curve(
    src: &SourceModel,
    task: Task,
    eps: f64,
    ns: &[u64],
    grid: XiGrid,
    exec: Execution,
) -> Result<BoundCurve> {
    check_eps(eps)?;
    let points = exec
        .map(ns, |&n| -> Result<CurvePoint> {
            let nf = n as f64;
            let (b, second) = match task {
                Task::Extraction => (l_bounds_finite(src, nf, eps, grid)?, second_order_l(src, nf, eps)),
                Task::Compression => (m_bounds_finite(src, nf, eps, grid)?, second_order_m(src, nf, eps)),
            };
            Ok(point(src, n, &b, second))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundCurve {
        task,
        eps,
        shannon: src.h,
        points,
    })
}

/// Exact i.i.d. extraction bounds from the binomial information spectrum:
///
/// lower `sup_{ξ₁} −D_s^{1−ε²(1−ξ₁)}(Pⁿ‖Qⁿ) − log(5⁵⌈nλ⌉/(ξ₁⁵ ε⁶ (1−ε)))`,
/// upper `inf_{ξ₂} −D_s^{1−ε²(1+ξ₂)}(Pⁿ‖Qⁿ) + log(2⁸3⁶⌈nλ⌉/(ξ₂⁶ ε¹⁰))`,
/// both over ξ ∈ (0, 1) with (P, Q) the source's pair.
pub fn exact_l_bounds(src: &SourceModel, n: u64, eps: f64, grid: XiGrid) -> Result<FiniteBounds> {
    check_eps(eps)?;
    let atoms = src.pair.atoms().len();
    if atoms != 2 {
        return Err(BlocklengthError::NotBinary(atoms));
    }
    let e2 = eps * eps;
    let nf = n as f64;
    let cl = src.ceil_n_lambda(nf);
    let ds = |tail: f64| ds_iid_exact_level(&src.pair, n, Level::Tail(tail)).unwrap_or(f64::NAN);
    let (xl, lower) = maximize_open(0.0, 1.0, grid, |xi| {
        -ds(e2 * (1.0 - xi))
            - (5f64.powi(5) * cl / (xi.powi(5) * eps.powi(6) * (1.0 - eps))).log2()
    })?;
    let xi_max = (1.0 / e2 - 1.0).min(1.0);
    let (xu, neg_upper) = maximize_open(0.0, xi_max, grid, |xi| {
        ds(e2 * (1.0 + xi)) - (2f64.powi(8) * 3f64.powi(6) * cl / (xi.powi(6) * eps.powi(10))).log2()
    })?;
    Ok(FiniteBounds {
        lower,
        upper: -neg_upper,
        xi_lower: xl,
        xi_upper: xu,
        valid: lower.is_finite() && neg_upper.is_finite(),
    })
}

/// Extraction curve from [`exact_l_bounds`] at every `n`. The source's llr
/// must take exactly two values.
pub fn exact_curve(src: &SourceModel, eps: f64, ns: &[u64], grid: XiGrid, exec: Execution) -> Result<BoundCurve> {
    check_eps(eps)?;
    let points = exec
        .map(ns, |&n| -> Result<CurvePoint> {
            let b = exact_l_bounds(src, n, eps, grid)?;
            log::debug!(
                "n = {n}: xi_lower·√n = {:.3e}, xi_upper·√n = {:.3e}",
                b.xi_lower * (n as f64).sqrt(),
                b.xi_upper * (n as f64).sqrt()
            );
            Ok(point(src, n, &b, second_order_l(src, n as f64, eps)))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundCurve {
        task: Task::Extraction,
        eps,
        shannon: src.h,
        points,
    })
}

/// Exact extraction curve for the Pauli source with phase error `p`.
pub fn figure1_curves(p: f64, eps: f64, ns: &[u64], grid: XiGrid, exec: Execution) -> Result<BoundCurve> {
    exact_curve(&pauli_source(p)?, eps, ns, grid, exec)
}

/// `count` integers log-spaced over `[lo, hi]`, deduplicated.
pub fn log_spaced(lo: u64, hi: u64, count: usize) -> Vec<u64> {
    if count == 0 || lo > hi || lo == 0 {
        return Vec::new();
    }
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<u64> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp().round() as u64)
        .map(|n| n.clamp(lo, hi))
        .collect();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::{berry_esseen_ds, ds_iid_exact, MomentTriple};
    use crate::divergences::{ds_iid_exact_level, Level};
    use crate::states::CqState;

    fn binary_entropy(p: f64) -> f64 {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }

    #[test]
    fn pauli_landmarks() {
        let src = pauli_source(0.05).unwrap();
        assert!((src.h - (1.0 - binary_entropy(0.05))).abs() < 1e-10);
        let v = 0.05 * 0.95 * (0.95f64 / 0.05).log2().powi(2);
        assert!((src.v - v).abs() < 1e-10);
        assert!((src.lambda - 19f64.log2()).abs() < 1e-10);
        assert_eq!(src.pair.atoms().len(), 2);
        assert!(pauli_source(0.5).is_err());
        assert!(pauli_source(0.0).is_err());
    }

    #[test]
    fn second_order_signs() {
        let src = pauli_source(0.05).unwrap();
        let n = 1e4;
        assert!((second_order_m(&src, n, 0.5) - n * src.h).abs() < 1e-9);
        assert!(second_order_m(&src, n, 0.1) > n * src.h);
        assert!(second_order_m(&src, n, 0.9) < n * src.h);
        assert!(second_order_l(&src, n, 0.1) < n * src.h);
        assert!(second_order_l(&src, n, 0.9) > n * src.h);
    }

    #[test]
    fn grid_optimizer_finds_interior_maximum() {
        let (x, v) = maximize_open(0.0, 1.0, XiGrid::default(), |x| -(x - 0.3).powi(2)).unwrap();
        assert!((x - 0.3).abs() < 1e-6 && v.abs() < 1e-12);
        let (x, _) = maximize_open(0.0, 1.0, XiGrid::default(), |x| -(x.ln() + 9.0).powi(2)).unwrap();
        assert!((x.ln() + 9.0).abs() < 1e-3);
        assert!(maximize_open(0.0, 1.0, XiGrid { points: 2, golden_steps: 0 }, |x| x).is_err());
    }

    #[test]
    fn finite_bounds_are_ordered() {
        let src = pauli_source(0.05).unwrap();
        for &eps in &[0.05, 0.2, 0.5, 0.8] {
            for &n in &[1e3, 1e4, 1e6] {
                for b in [
                    m_bounds_finite(&src, n, eps, XiGrid::default()).unwrap(),
                    l_bounds_finite(&src, n, eps, XiGrid::default()).unwrap(),
                ] {
                    assert!(b.lower <= b.upper, "eps {eps}, n {n}: {b:?}");
                }
            }
        }
    }

    #[test]
    fn finite_m_bounds_approach_second_order() {
        let src = pauli_source(0.05).unwrap();
        for &n in &[1e6, 1e7] {
            let b = m_bounds_finite(&src, n, 0.1, XiGrid::default()).unwrap();
            let g = second_order_m(&src, n, 0.1);
            let envelope = 20.0 * n.log2();
            assert!(b.valid);
            assert!(b.lower <= g + 1e-6 && g <= b.upper + 1e-6);
            assert!(g - b.lower <= envelope && b.upper - g <= envelope, "{b:?} vs {g}");
        }
    }

    #[test]
    fn below_threshold_is_vacuous() {
        let src = pauli_source(0.05).unwrap();
        let b = l_bounds_finite(&src, 1e4, 1e-6, XiGrid::default()).unwrap();
        assert!(!b.valid && b.lower == f64::NEG_INFINITY && b.upper == f64::INFINITY);
    }

    #[test]
    fn deterministic_source_bounds_are_logarithmic() {
        let cq = CqState::new(vec![
            (1.0, DensityOperator::maximally_mixed(2)),
            (0.0, DensityOperator::maximally_mixed(2)),
        ])
        .unwrap();
        let src = SourceModel::new(cq).unwrap();
        assert_eq!(src.v, 0.0);
        for &n in &[1e3, 1e6] {
            let b = m_bounds_finite(&src, n, 0.3, XiGrid::default()).unwrap();
            assert!(b.valid);
            assert!(b.lower.abs() <= 20.0 && b.upper.abs() <= 20.0, "{b:?}");
        }
    }

    #[test]
    fn bounds_monotone_in_eps() {
        let src = pauli_source(0.1).unwrap();
        let n = 1e6;
        let eps = [0.05, 0.1, 0.2, 0.3, 0.4];
        let m: Vec<_> = eps
            .iter()
            .map(|&e| m_bounds_finite(&src, n, e, XiGrid::default()).unwrap())
            .collect();
        let l: Vec<_> = eps
            .iter()
            .map(|&e| l_bounds_finite(&src, n, e, XiGrid::default()).unwrap())
            .collect();
        for w in m.windows(2) {
            assert!(w[1].lower <= w[0].lower + 1e-9 && w[1].upper <= w[0].upper + 1e-9);
        }
        for w in l.windows(2) {
            assert!(w[1].lower >= w[0].lower - 1e-9 && w[1].upper >= w[0].upper - 1e-9);
        }
    }

    #[test]
    fn figure1_small_sweep() {
        let ns = log_spaced(10_000, 100_000_000, 5);
        let curve = figure1_curves(0.05, 1e-6, &ns, XiGrid::default(), Execution::default()).unwrap();
        let first = &curve.points[0];
        assert!(first.upper_rate() <= 0.95 * curve.shannon);
        let last = curve.points.last().unwrap();
        assert!((last.lower_rate() / curve.shannon - 1.0).abs() < 0.01);
        assert!((last.upper_rate() / curve.shannon - 1.0).abs() < 0.01);
        for p in &curve.points {
            assert!(p.lower <= p.upper, "{p:?}");
        }
    }

    #[test]
    fn exact_spectrum_inside_berry_esseen() {
        let src = pauli_source(0.05).unwrap();
        let m = MomentTriple::new(-src.h, src.v, src.t);
        for &n in &[1_000u64, 10_000, 1_000_000, 100_000_000] {
            for &eps in &[0.01, 0.3, 0.9] {
                let exact = ds_iid_exact(&src.pair, n, eps).unwrap();
                let (lo, hi) = berry_esseen_ds(&m, n as f64, eps, BERRY_ESSEEN_C);
                assert!(lo <= exact && exact <= hi, "n {n}, eps {eps}: {lo} {exact} {hi}");
            }
        }
    }

    #[test]
    fn csv_layout() {
        let src = pauli_source(0.05).unwrap();
        let curve = bounds_curve(&src, Task::Compression, 0.1, &[], XiGrid::default(), Execution::Sequential)
            .unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), CURVE_CSV_HEADER.join(","));

        let curve = bounds_curve(&src, Task::Compression, 0.1, &[100], XiGrid::default(), Execution::Sequential)
            .unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn figure1_spectrum_inside_berry_esseen() {
        let src = pauli_source(0.05).unwrap();
        let m = MomentTriple::new(-src.h, src.v, src.t);
        let eps: f64 = 1e-6;
        let ns = log_spaced(10_000, 100_000_000, 9);
        let curve = figure1_curves(0.05, eps, &ns, XiGrid::default(), Execution::Sequential).unwrap();
        for p in &curve.points {
            for tail in [eps * eps * (1.0 - p.xi_lower), eps * eps * (1.0 + p.xi_upper)] {
                let ds = ds_iid_exact_level(&src.pair, p.n, Level::Tail(tail)).unwrap();
                let (lo, hi) = berry_esseen_ds(&m, p.n as f64, 1.0 - tail, BERRY_ESSEEN_C);
                assert!(lo <= ds && ds <= hi, "n {}: {lo} {ds} {hi}", p.n);
            }
        }
    }

    #[test]
    fn optimal_xi_scales_like_inverse_root_n() {
        let src = pauli_source(0.05).unwrap();
        let scaled: Vec<f64> = [1e6, 1e8, 1e10]
            .iter()
            .map(|&n| m_bounds_finite(&src, n, 0.1, XiGrid::default()).unwrap().xi_upper * n.sqrt())
            .collect();
        eprintln!("xi_upper * sqrt(n) at n = 1e6, 1e8, 1e10: {scaled:?}");
        let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        assert!(hi / lo < 3.0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn finite_bounds_ordered_for_pauli_sources(
            p in 0.01f64..0.49,
            eps in 0.02f64..0.98,
            log_n in 2.0f64..9.0,
        ) {
            let src = pauli_source(p).unwrap();
            let n = 10f64.powf(log_n);
            for b in [
                m_bounds_finite(&src, n, eps, XiGrid::default()).unwrap(),
                l_bounds_finite(&src, n, eps, XiGrid::default()).unwrap(),
            ] {
                proptest::prop_assert!(b.lower <= b.upper);
                proptest::prop_assert_eq!(b.valid, b.lower.is_finite());
            }
        }

        #[test]
        fn exact_bounds_ordered(p in 0.01f64..0.49, eps in 1e-4f64..0.9, n in 1u64..1_000_000_000) {
            let src = pauli_source(p).unwrap();
            let b = exact_l_bounds(&src, n, eps, XiGrid::default()).unwrap();
            proptest::prop_assert!(b.lower <= b.upper);
        }
    }

    #[test]
    fn log_spacing() {
        assert_eq!(log_spaced(10, 1000, 3), vec![10, 100, 1000]);
        assert!(log_spaced(10, 1, 3).is_empty());
        assert_eq!(log_spaced(5, 5, 4), vec![5]);
    }
}
