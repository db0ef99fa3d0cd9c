//! One-shot entropies: hypothesis testing divergence, smooth max-divergence
//! and smooth min-entropy.
//!
//! Every quantity is computed by an SDP. The hypothesis testing divergence
//! additionally has a Neyman–Pearson path (bisection over the Lagrange
//! multiplier) that must agree with the SDP.

use crate::linalg::{support_projector, CMatrix, HermitianOperator, LinalgError};
use crate::sdp::{
    self, fidelity_block_factor, LinearMap, SdpBuilder, SdpError, SdpSolution, SdpStatus,
    SolverOptions,
};
use crate::states::{DensityOperator, StateError};
use thiserror::Error;

/// Maximal allowed disagreement (bits) between the two D_h methods.
pub const CROSS_CHECK_TOL: f64 = 1e-6;
/// Mass tolerance for the support tests that short-circuit to ±∞.
const KERNEL_TOL: f64 = 1e-12;
pub(crate) const NEAR_OPTIMAL_TOL: f64 = 1e-7;
/// Relative gap accepted from a stalled smoothing program. Tiny smoothing
/// radii leave almost no interior and the solver stalls early; the
/// remaining gap is reported in the result.
pub(crate) const SMOOTHED_GAP_TOL: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OneShotError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("epsilon {0} outside {1}")]
    BadEpsilon(f64, &'static str),
    #[error("state has trace {0}, expected 1")]
    NotNormalized(f64),
    #[error("operator dimensions {0} and {1} do not match")]
    DimensionMismatch(usize, usize),
    #[error("reference operator is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositive(f64),
    #[error("SDP solver stopped with status {0:?}")]
    Solver(SdpStatus),
    #[error("Neyman-Pearson gives {np} bits, SDP gives {sdp} bits")]
    MethodDisagreement { sdp: f64, np: f64 },
}

pub type Result<T> = std::result::Result<T, OneShotError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Sdp,
    NeymanPearson,
}

/// Dual triple `(N, σ_B, η)` of the optimized hypothesis testing entropy:
/// `ρ ⪯ 1⊗σ_B / η + N`, `tr σ_B ≤ 1`, objective `η(1 − ε − tr N)`.
#[derive(Clone, Debug)]
pub struct HhDual {
    pub n: HermitianOperator,
    pub sigma_b: HermitianOperator,
    pub eta: f64,
}

impl HhDual {
    pub fn value(&self, eps: f64) -> f64 {
        self.eta * (1.0 - eps - self.n.trace())
    }

    /// Worst violation of the dual constraints, as a non-positive number
    /// (zero when feasible). The operator inequality is checked in the
    /// form `1⊗σ_B + ηN − ηρ ⪰ 0`.
    pub fn violation(&self, rho_ab: &HermitianOperator, dim_a: usize) -> f64 {
        let lifted = HermitianOperator::identity(dim_a).kron(&self.sigma_b);
        let gap = lifted.add(&self.n.scale(self.eta)).sub(&rho_ab.scale(self.eta));
        [
            gap.min_eigenvalue(),
            self.n.min_eigenvalue(),
            self.sigma_b.min_eigenvalue(),
            1.0 - self.sigma_b.trace(),
            self.eta,
        ]
        .into_iter()
        .fold(0.0, f64::min)
    }
}

#[derive(Clone, Debug)]
pub enum Witness {
    /// Optimal test operator Q.
    Test(HermitianOperator),
    /// Optimal test for the optimized conditional entropy, with its dual.
    Optimized { q: HermitianOperator, dual: HhDual },
    /// Smoothed state, and σ_B when it is part of the optimization.
    Smoothed {
        state: HermitianOperator,
        sigma_b: Option<HermitianOperator>,
    },
    /// No optimizer exists (infinite value from an infeasible program).
    None,
}

#[derive(Clone, Debug)]
pub struct OneShotResult {
    /// Bits; may be ±∞.
    pub value: f64,
    pub witness: Witness,
    /// Certified gap in bits between the primal and dual bounds.
    pub gap: f64,
    pub method: Method,
}

impl OneShotResult {
    fn exact(value: f64, witness: Witness, method: Method) -> Self {
        Self {
            value,
            witness,
            gap: 0.0,
            method,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }

    pub fn test(&self) -> Option<&HermitianOperator> {
        match &self.witness {
            Witness::Test(q) | Witness::Optimized { q, .. } => Some(q),
            _ => None,
        }
    }
}

pub(crate) fn options() -> SolverOptions {
    SolverOptions {
        gap_tol: 1e-10,
        feas_tol: 1e-10,
        max_iter: 150,
    }
}

fn check_eps(eps: f64, allow_one: bool) -> Result<()> {
    let ok = if allow_one {
        (0.0..=1.0).contains(&eps)
    } else {
        (0.0..1.0).contains(&eps)
    };
    if ok {
        Ok(())
    } else {
        Err(OneShotError::BadEpsilon(
            eps,
            if allow_one { "[0, 1]" } else { "[0, 1)" },
        ))
    }
}

fn check_state(rho: &DensityOperator) -> Result<()> {
    if rho.is_normalized() {
        Ok(())
    } else {
        Err(OneShotError::NotNormalized(rho.trace()))
    }
}

fn check_reference(rho: &DensityOperator, sigma: &HermitianOperator) -> Result<()> {
    if rho.dim() != sigma.dim() {
        return Err(OneShotError::DimensionMismatch(rho.dim(), sigma.dim()));
    }
    let min = sigma.min_eigenvalue();
    if min < -1e-12 * sigma.max_abs_entry().max(1.0) {
        return Err(OneShotError::NotPositive(min));
    }
    Ok(())
}

fn check_bipartite(rho: &DensityOperator, dims: [usize; 2]) -> Result<()> {
    if dims[0] * dims[1] != rho.dim() {
        return Err(StateError::BadDims {
            dims: dims.to_vec(),
            total: rho.dim(),
        }
        .into());
    }
    Ok(())
}

fn bits_gap(primal: f64, dual: f64) -> f64 {
    if primal == dual {
        0.0
    } else if primal > 0.0 && dual > 0.0 {
        (primal / dual).log2().abs()
    } else {
        f64::INFINITY
    }
}

/// Accepts an optimal solution, or one that ran out of iterations in the
/// slow tail typical of problems without strict complementarity as long as
/// its residuals are small and its relative gap is within `gap_tol`.
pub(crate) fn require_optimal(sol: &SdpSolution, gap_tol: f64) -> Result<()> {
    let near = sol.status == SdpStatus::MaxIterations
        && sol.gap() <= gap_tol * sol.primal_value.abs().max(1.0)
        && sol.primal_residual <= NEAR_OPTIMAL_TOL
        && sol.dual_residual <= NEAR_OPTIMAL_TOL;
    if near {
        log::debug!("accepting near-optimal SDP solution, gap {:e}", sol.gap());
    }
    if sol.is_optimal() || near {
        Ok(())
    } else {
        Err(OneShotError::Solver(sol.status))
    }
}

fn scalar(v: f64) -> HermitianOperator {
    HermitianOperator::from_real_diagonal(&[v])
}

/// Columns spanning the support of `a`, scaled by `√λ` when `sqrt_weights`.
pub(crate) fn support_columns(a: &HermitianOperator, sqrt_weights: bool) -> CMatrix {
    let es = a.eig();
    let tol = es.support_threshold();
    let keep: Vec<usize> = (0..es.dim()).filter(|&k| es.eigenvalues[k] > tol).collect();
    let mut v = CMatrix::zeros(a.dim(), keep.len());
    for (col, &k) in keep.iter().enumerate() {
        let w = if sqrt_weights {
            es.eigenvalues[k].sqrt()
        } else {
            1.0
        };
        for i in 0..a.dim() {
            v[(i, col)] = es.eigenvectors[(i, k)] * w;
        }
    }
    v
}

/// `D_h^ε(ρ‖σ)` in bits.
pub fn dh(
    rho: &DensityOperator,
    sigma: &HermitianOperator,
    eps: f64,
    method: Method,
) -> Result<OneShotResult> {
    check_eps(eps, true)?;
    check_state(rho)?;
    check_reference(rho, sigma)?;
    let d = rho.dim();
    if eps >= 1.0 {
        return Ok(OneShotResult::exact(
            f64::INFINITY,
            Witness::Test(HermitianOperator::zeros(d)),
            method,
        ));
    }
    let kernel = HermitianOperator::identity(d).sub(&support_projector(sigma));
    if kernel.inner(rho.op()) >= 1.0 - eps - KERNEL_TOL {
        return Ok(OneShotResult::exact(
            f64::INFINITY,
            Witness::Test(kernel),
            method,
        ));
    }
    // D_h(ρ‖sσ) = D_h(ρ‖σ) − log s; solve with a unit-trace reference.
    let s = sigma.trace();
    let unit = sigma.scale(1.0 / s);
    let mut out = match method {
        Method::Sdp => dh_sdp(rho, &unit, eps)?,
        Method::NeymanPearson => dh_neyman_pearson(rho, &unit, eps),
    };
    out.value -= s.log2();
    Ok(out)
}

/// Runs both methods and fails if they disagree; returns the SDP result.
pub fn dh_cross_checked(
    rho: &DensityOperator,
    sigma: &HermitianOperator,
    eps: f64,
) -> Result<OneShotResult> {
    let sdp = dh(rho, sigma, eps, Method::Sdp)?;
    let np = dh(rho, sigma, eps, Method::NeymanPearson)?;
    let agree = if sdp.value.is_infinite() || np.value.is_infinite() {
        sdp.value == np.value
    } else {
        (sdp.value - np.value).abs() <= CROSS_CHECK_TOL
    };
    if agree {
        Ok(sdp)
    } else {
        Err(OneShotError::MethodDisagreement {
            sdp: sdp.value,
            np: np.value,
        })
    }
}

fn dh_sdp(rho: &DensityOperator, sigma: &HermitianOperator, eps: f64) -> Result<OneShotResult> {
    let d = rho.dim();
    let mut b = SdpBuilder::new();
    let q = b.psd(d);
    let w = b.psd(d);
    let t = b.nonneg();
    b.matrix_equality(
        &[(q, LinearMap::Scaled(1.0)), (w, LinearMap::Scaled(1.0))],
        &HermitianOperator::identity(d),
    )?;
    b.scalar_equality(&[(q, rho.op()), (t, &scalar(-1.0))], 1.0 - eps)?;
    b.minimize(q, sigma)?;
    let sol = sdp::solve(&b.build()?, options());
    require_optimal(&sol, NEAR_OPTIMAL_TOL)?;
    let value = if sol.primal_value > 0.0 {
        -sol.primal_value.log2()
    } else {
        f64::INFINITY
    };
    Ok(OneShotResult {
        value,
        witness: Witness::Test(sol.primal(q)),
        gap: bits_gap(sol.primal_value, sol.dual_value),
        method: Method::Sdp,
    })
}

struct Level {
    /// `{μρ − σ > 0}`
    proj: HermitianOperator,
    /// `⟨proj, ρ⟩`
    mass: f64,
    /// `tr(μρ − σ)₊`
    positive_part: f64,
}

fn np_level(rho: &HermitianOperator, sigma: &HermitianOperator, mu: f64) -> Level {
    let es = rho.scale(mu).sub(sigma).eig();
    let tol = es.support_threshold();
    let proj = es.projector(|x| x > tol);
    let positive_part = es.eigenvalues.iter().filter(|&&x| x > tol).sum();
    Level {
        mass: proj.inner(rho),
        proj,
        positive_part,
    }
}

/// Lagrangian dual: `max_μ μ(1−ε) − tr(μρ − σ)₊`. The slope
/// `(1−ε) − tr ρ{μρ > σ}` is nonincreasing in μ, so the optimal μ is found
/// by bisection; the optimal test mixes the two bracketing projectors so
/// that `⟨Q, ρ⟩ = 1 − ε` holds exactly.
fn dh_neyman_pearson(rho: &DensityOperator, sigma: &HermitianOperator, eps: f64) -> OneShotResult {
    let r = rho.op();
    if eps == 0.0 {
        let q = support_projector(r);
        let v = q.inner(sigma);
        return OneShotResult::exact(-v.log2(), Witness::Test(q), Method::NeymanPearson);
    }
    let target = 1.0 - eps;
    let mut hi = 1.0f64;
    let mut at_hi = np_level(r, sigma, hi);
    while at_hi.mass < target && hi < 1e300 {
        hi *= 4.0;
        at_hi = np_level(r, sigma, hi);
    }
    let mut lo = hi / 4.0;
    let mut at_lo = np_level(r, sigma, lo);
    while at_lo.mass >= target && lo > 1e-300 {
        hi = lo;
        at_hi = at_lo;
        lo /= 4.0;
        at_lo = np_level(r, sigma, lo);
    }
    for _ in 0..200 {
        if hi <= lo * (1.0 + 1e-15) {
            break;
        }
        let mid = (lo * hi).sqrt();
        let at = np_level(r, sigma, mid);
        if at.mass >= target {
            hi = mid;
            at_hi = at;
        } else {
            lo = mid;
            at_lo = at;
        }
    }
    let spread = at_hi.mass - at_lo.mass;
    let a = if spread > 0.0 {
        ((at_hi.mass - target) / spread).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = at_lo.proj.scale(a).add(&at_hi.proj.scale(1.0 - a));
    let primal = q.inner(sigma);
    let dual = [(lo, &at_lo), (hi, &at_hi)]
        .iter()
        .map(|(mu, l)| mu * target - l.positive_part)
        .fold(f64::NEG_INFINITY, f64::max);
    OneShotResult {
        value: -primal.log2(),
        witness: Witness::Test(q),
        gap: bits_gap(primal, dual),
        method: Method::NeymanPearson,
    }
}

/// `H_h^ε(A|B)_{ρ|σ} = −D_h^ε(ρ_AB ‖ 1_A ⊗ σ_B)`.
pub fn hh_conditional(
    rho_ab: &DensityOperator,
    sigma_b: &HermitianOperator,
    dims: [usize; 2],
    eps: f64,
    method: Method,
) -> Result<OneShotResult> {
    check_bipartite(rho_ab, dims)?;
    if sigma_b.dim() != dims[1] {
        return Err(OneShotError::DimensionMismatch(sigma_b.dim(), dims[1]));
    }
    let reference = HermitianOperator::identity(dims[0]).kron(sigma_b);
    let mut out = dh(rho_ab, &reference, eps, method)?;
    out.value = -out.value;
    Ok(out)
}

/// `H_h^ε(A|B)_ρ = log min { ‖tr_A Q‖ : 0 ⪯ Q ⪯ 1, ⟨Q, ρ⟩ ≥ 1 − ε }`,
/// with the operator norm handled through an epigraph variable γ.
pub fn hh_optimized(rho_ab: &DensityOperator, dims: [usize; 2], eps: f64) -> Result<OneShotResult> {
    check_eps(eps, true)?;
    check_state(rho_ab)?;
    check_bipartite(rho_ab, dims)?;
    let [da, db] = dims;
    let d = rho_ab.dim();
    if eps >= 1.0 {
        let dual = HhDual {
            n: HermitianOperator::zeros(d),
            sigma_b: HermitianOperator::zeros(db),
            eta: 0.0,
        };
        return Ok(OneShotResult::exact(
            f64::NEG_INFINITY,
            Witness::Optimized {
                q: HermitianOperator::zeros(d),
                dual,
            },
            Method::Sdp,
        ));
    }
    let mut b = SdpBuilder::new();
    let q = b.psd(d);
    let w = b.psd(d);
    let v = b.psd(db);
    let gamma = b.nonneg();
    let t = b.nonneg();
    b.matrix_equality(
        &[(q, LinearMap::Scaled(1.0)), (w, LinearMap::Scaled(1.0))],
        &HermitianOperator::identity(d),
    )?;
    // tr_A Q + V − γ 1 = 0
    b.matrix_equality(
        &[
            (q, LinearMap::PartialTraceFirst { dim_a: da }),
            (v, LinearMap::Scaled(1.0)),
            (
                gamma,
                LinearMap::ScalarTimes(HermitianOperator::identity(db).scale(-1.0)),
            ),
        ],
        &HermitianOperator::zeros(db),
    )?;
    let row = b.scalar_equality(&[(q, rho_ab.op()), (t, &scalar(-1.0))], 1.0 - eps)?;
    b.minimize_trace(gamma, 1.0)?;
    let sol = sdp::solve(&b.build()?, options());
    require_optimal(&sol, NEAR_OPTIMAL_TOL)?;
    let eta = sol.y[row];
    let scaled_n = sol.dual_slack(w);
    let n = if eta > 0.0 {
        scaled_n.scale(1.0 / eta)
    } else {
        scaled_n
    };
    let dual = HhDual {
        n,
        sigma_b: sol.dual_slack(v),
        eta,
    };
    Ok(OneShotResult {
        value: sol.primal_value.log2(),
        witness: Witness::Optimized {
            q: sol.primal(q),
            dual,
        },
        gap: bits_gap(sol.primal_value, sol.dual_value),
        method: Method::Sdp,
    })
}

/// Smooth max-divergence over the purified-distance ball of radius ε:
/// `min { log m : ρ̃ ⪯ m σ, tr ρ̃ ≤ 1, F(ρ̃, ρ) ≥ √(1 − ε²) }`.
///
/// The program is restricted to `supp σ`, where σ is invertible.
pub fn dmax_smooth(rho: &DensityOperator, sigma: &HermitianOperator, eps: f64) -> Result<OneShotResult> {
    check_eps(eps, false)?;
    check_state(rho)?;
    check_reference(rho, sigma)?;
    let f = (1.0 - eps * eps).sqrt();
    let iso = support_columns(sigma, false);
    let r = iso.ncols();
    // Best fidelity reachable inside supp σ is √⟨ρ, Π_σ⟩.
    let inside = if r == 0 {
        0.0
    } else {
        HermitianOperator::symmetrized(&iso * iso.adjoint()).inner(rho.op())
    };
    if r == 0 || inside < f * f - KERNEL_TOL {
        return Ok(OneShotResult::exact(f64::INFINITY, Witness::None, Method::Sdp));
    }
    let s = sigma.trace();
    let sigma_hat = HermitianOperator::symmetrized(iso.adjoint() * sigma.matrix() * &iso).scale(1.0 / s);
    let lift = |x: &HermitianOperator| HermitianOperator::symmetrized(&iso * x.matrix() * iso.adjoint());

    let mut b = SdpBuilder::new();
    let m = b.nonneg();
    let w = b.psd(r);
    let state = if eps == 0.0 {
        let rho_hat = HermitianOperator::symmetrized(iso.adjoint() * rho.op().matrix() * &iso);
        b.matrix_equality(
            &[
                (m, LinearMap::ScalarTimes(sigma_hat)),
                (w, LinearMap::Scaled(-1.0)),
            ],
            &rho_hat,
        )?;
        None
    } else {
        let factor = iso.adjoint() * support_columns(rho.op(), true);
        let fb = fidelity_block_factor(&mut b, &factor, f)?;
        let u = b.nonneg();
        b.scalar_equality(
            &[(fb.state, &HermitianOperator::identity(r)), (u, &scalar(1.0))],
            1.0,
        )?;
        b.matrix_equality(
            &[
                (m, LinearMap::ScalarTimes(sigma_hat)),
                (fb.state, LinearMap::Scaled(-1.0)),
                (w, LinearMap::Scaled(-1.0)),
            ],
            &HermitianOperator::zeros(r),
        )?;
        Some(fb.state)
    };
    b.minimize_trace(m, 1.0)?;
    let sol = sdp::solve(&b.build()?, options());
    if sol.status == SdpStatus::Infeasible {
        return Ok(OneShotResult::exact(f64::INFINITY, Witness::None, Method::Sdp));
    }
    require_optimal(&sol, SMOOTHED_GAP_TOL)?;
    let smoothed = match state {
        Some(slot) => lift(&sol.primal(slot)),
        None => rho.op().clone(),
    };
    Ok(OneShotResult {
        value: sol.primal_value.log2() - s.log2(),
        witness: Witness::Smoothed {
            state: smoothed,
            sigma_b: None,
        },
        gap: bits_gap(sol.primal_value, sol.dual_value),
        method: Method::Sdp,
    })
}

/// Smooth min-entropy `H_min^ε(A|B) = −log min { tr σ_B : ρ̃ ⪯ 1⊗σ_B,
/// tr ρ̃ ≤ 1, F(ρ̃, ρ) ≥ √(1 − ε²) }`.
pub fn hmin_smooth(rho_ab: &DensityOperator, dims: [usize; 2], eps: f64) -> Result<OneShotResult> {
    check_eps(eps, false)?;
    check_state(rho_ab)?;
    check_bipartite(rho_ab, dims)?;
    let [da, db] = dims;
    let d = rho_ab.dim();
    let mut b = SdpBuilder::new();
    let sb = b.psd(db);
    let w = b.psd(d);
    let kron = LinearMap::KronIdentityLeft { dim_a: da };
    let state = if eps == 0.0 {
        b.matrix_equality(&[(sb, kron), (w, LinearMap::Scaled(-1.0))], rho_ab.op())?;
        None
    } else {
        let factor = support_columns(rho_ab.op(), true);
        let fb = fidelity_block_factor(&mut b, &factor, (1.0 - eps * eps).sqrt())?;
        let u = b.nonneg();
        b.scalar_equality(
            &[(fb.state, &HermitianOperator::identity(d)), (u, &scalar(1.0))],
            1.0,
        )?;
        b.matrix_equality(
            &[
                (sb, kron),
                (fb.state, LinearMap::Scaled(-1.0)),
                (w, LinearMap::Scaled(-1.0)),
            ],
            &HermitianOperator::zeros(d),
        )?;
        Some(fb.state)
    };
    b.minimize_trace(sb, 1.0)?;
    let sol = sdp::solve(&b.build()?, options());
    require_optimal(&sol, SMOOTHED_GAP_TOL)?;
    let smoothed = match state {
        Some(slot) => sol.primal(slot),
        None => rho_ab.op().clone(),
    };
    Ok(OneShotResult {
        value: -sol.primal_value.log2(),
        witness: Witness::Smoothed {
            state: smoothed,
            sigma_b: Some(sol.primal(sb)),
        },
        gap: bits_gap(sol.primal_value, sol.dual_value),
        method: Method::Sdp,
    })
}
