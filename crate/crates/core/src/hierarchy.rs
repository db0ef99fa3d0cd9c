//! Numerical verification of the inequalities linking hypothesis testing,
//! smooth max-divergence, information spectrum of the state pair, of its
//! pinched version and of the Nussbaum–Szkoła distributions.
//!
//! Every check produces an [`InequalityReport`] oriented as `lhs ≤ rhs`.

use crate::divergences::{
    ds_classical, nussbaum_szkola, pinched_pair, ClassicalPair, DivergenceError, QuantumSpectrum,
    SpectrumGrid,
};
use crate::format::sig12;
use crate::linalg::{random_unitary, CMatrix, HermitianOperator};
use crate::one_shot::{self, hh_optimized, Method, OneShotError};
use crate::par::Execution;
use crate::states::{
    eigenspaces, partial_trace_op, permute_subsystems, pinch_with, random_density,
    random_simplex, spectral_stats, CqState, DensityOperator, SpectralStats, StateError,
    CLUSTER_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

/// A report passes when `rhs − lhs ≥ −SLACK_TOL` (bits).
pub const SLACK_TOL: f64 = 1e-6;
/// Bumped whenever [`DEFAULT_SUITE`] changes.
pub const SUITE_VERSION: u32 = 1;
/// Weight of the maximally mixed state mixed into random instances so
/// that they are safely full rank.
const FULL_RANK_MIX: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error(transparent)]
    OneShot(#[from] OneShotError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("parameters ε = {eps}, δ = {delta} violate {need}")]
    BadParameters {
        eps: f64,
        delta: f64,
        need: &'static str,
    },
    #[error("unknown instance kind {0:?}")]
    UnknownKind(String),
    #[error("instance dimension {0} not supported")]
    BadDimension(usize),
    #[error("{entry}: {source}")]
    Entry {
        entry: String,
        source: Box<HierarchyError>,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HierarchyError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InstanceKind {
    Generic,
    /// ρ and σ share an eigenbasis.
    Commuting,
    /// `ρ_XB` with binary X and `σ = 1_X ⊗ ρ_B`.
    Cq,
    /// σ with repeated eigenvalues.
    Degenerate,
    /// σ with distinct eigenvalues in a narrow band, so `2⌈λ⌉ < ν` once
    /// the dimension exceeds two.
    Clustered,
}

impl InstanceKind {
    pub const ALL: [InstanceKind; 5] = [
        InstanceKind::Generic,
        InstanceKind::Commuting,
        InstanceKind::Cq,
        InstanceKind::Degenerate,
        InstanceKind::Clustered,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InstanceKind::Generic => "generic",
            InstanceKind::Commuting => "commuting",
            InstanceKind::Cq => "cq",
            InstanceKind::Degenerate => "degenerate",
            InstanceKind::Clustered => "clustered",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for InstanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InstanceKind {
    type Err = HierarchyError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HierarchyError::UnknownKind(s.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub kind: InstanceKind,
    pub seed: u64,
    /// Subsystem dimensions of ρ (`[2, d]` for CQ instances).
    pub dims: Vec<usize>,
    pub rho: DensityOperator,
    pub sigma: HermitianOperator,
    pub cq: Option<CqState>,
}

fn mix_full_rank(rho: DensityOperator) -> DensityOperator {
    let d = rho.dim();
    let op = rho
        .op()
        .scale(1.0 - FULL_RANK_MIX)
        .add(&HermitianOperator::identity(d).scale(FULL_RANK_MIX / d as f64));
    DensityOperator::new(op).expect("mixture of states is a state")
}

fn rotated_diagonal(values: &[f64], u: &CMatrix) -> HermitianOperator {
    HermitianOperator::from_real_diagonal(values).conjugate_by(u)
}

/// Seeded random pair. Same `(dim, kind, seed)` gives a bit-identical
/// instance.
pub fn random_instance(dim: usize, kind: InstanceKind, seed: u64) -> Result<Instance> {
    if !(1..=8).contains(&dim) {
        return Err(HierarchyError::BadDimension(dim));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(kind.stream());
    let scale: f64 = rng.gen_range(-1.0f64..1.0).exp2();
    let mut dims = vec![dim];
    let mut cq = None;
    let (rho, sigma) = match kind {
        InstanceKind::Generic => {
            let rho = mix_full_rank(random_density(dim, &mut rng));
            let sigma = mix_full_rank(random_density(dim, &mut rng));
            (rho, sigma.op().scale(scale))
        }
        InstanceKind::Commuting => {
            let u = random_unitary(dim, &mut rng);
            let p = mix_simplex(random_simplex(dim, &mut rng));
            let q = mix_simplex(random_simplex(dim, &mut rng));
            let rho = DensityOperator::new(rotated_diagonal(&p, &u))?;
            (rho, rotated_diagonal(&q, &u).scale(scale))
        }
        InstanceKind::Cq => {
            let p = mix_simplex(random_simplex(2, &mut rng));
            let entries = p
                .into_iter()
                .map(|px| (px, mix_full_rank(random_density(dim, &mut rng))))
                .collect();
            let state = CqState::new(entries)?;
            let rho = state.to_density()?;
            let sigma = HermitianOperator::identity(2).kron(&state.marginal_b());
            dims = vec![2, dim];
            cq = Some(state);
            (rho, sigma)
        }
        InstanceKind::Degenerate => {
            let rho = mix_full_rank(random_density(dim, &mut rng));
            let a: f64 = rng.gen_range(0.1..1.0);
            let b: f64 = rng.gen_range(0.1..1.0);
            let values: Vec<f64> = (0..dim).map(|k| if k < dim.div_ceil(2) { a } else { b }).collect();
            let u = random_unitary(dim, &mut rng);
            (rho, rotated_diagonal(&values, &u))
        }
        InstanceKind::Clustered => {
            let rho = mix_full_rank(random_density(dim, &mut rng));
            let base: f64 = rng.gen_range(0.1..1.0);
            let values: Vec<f64> = (0..dim)
                .map(|k| base * (1.0 + 0.04 * k as f64 + 0.01 * rng.gen::<f64>()))
                .collect();
            let u = random_unitary(dim, &mut rng);
            (rho, rotated_diagonal(&values, &u))
        }
    };
    Ok(Instance {
        kind,
        seed,
        dims,
        rho,
        sigma,
        cq,
    })
}

fn mix_simplex(p: Vec<f64>) -> Vec<f64> {
    let n = p.len() as f64;
    p.into_iter()
        .map(|x| (1.0 - FULL_RANK_MIX) * x + FULL_RANK_MIX / n)
        .collect()
}

/// One inequality `lhs ≤ rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct InequalityReport {
    pub name: &'static str,
    pub kind: String,
    pub dims: Vec<usize>,
    pub seed: u64,
    pub eps: f64,
    pub delta: f64,
    pub nu: usize,
    pub theta: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    /// Sum of solver gaps (bits) of the one-shot values involved.
    pub solver_gap: f64,
}

/// `rhs − lhs` with the conventions `x ≤ +∞`, `−∞ ≤ x`, and `±∞ ≤ ±∞`
/// when both sides agree.
pub fn oriented_slack(lhs: f64, rhs: f64) -> f64 {
    if lhs.is_nan() || rhs.is_nan() {
        f64::NAN
    } else if lhs == rhs {
        0.0
    } else {
        rhs - lhs
    }
}

impl InequalityReport {
    fn new(name: &'static str, lhs: f64, rhs: f64, p: &Params, solver_gap: f64) -> Self {
        let slack = oriented_slack(lhs, rhs);
        Self {
            name,
            kind: String::new(),
            dims: Vec::new(),
            seed: 0,
            eps: p.eps,
            delta: p.delta,
            nu: p.stats.nu,
            theta: p.stats.theta,
            lhs,
            rhs,
            slack,
            pass: slack >= -SLACK_TOL,
            solver_gap,
        }
    }

    fn tagged(mut self, kind: &str, dims: &[usize], seed: u64) -> Self {
        self.kind = kind.to_string();
        self.dims = dims.to_vec();
        self.seed = seed;
        self
    }
}

struct Params {
    eps: f64,
    delta: f64,
    stats: SpectralStats,
}

/// Lazily evaluated quantities of one pair, shared by all checks.
struct Evaluator<'a> {
    rho: &'a DensityOperator,
    sigma: &'a HermitianOperator,
    stats: SpectralStats,
    spectrum: QuantumSpectrum,
    ns: ClassicalPair,
    pinched: ClassicalPair,
    dh: RefCell<HashMap<u64, (f64, f64)>>,
    dmax: RefCell<HashMap<u64, (f64, f64)>>,
}

impl<'a> Evaluator<'a> {
    fn new(rho: &'a DensityOperator, sigma: &'a HermitianOperator) -> Result<Self> {
        Ok(Self {
            rho,
            sigma,
            stats: spectral_stats(sigma, CLUSTER_TOL),
            spectrum: QuantumSpectrum::new(rho, sigma, SpectrumGrid::default())?,
            ns: nussbaum_szkola(rho, sigma)?,
            pinched: pinched_pair(rho, sigma, CLUSTER_TOL)?,
            dh: RefCell::new(HashMap::new()),
            dmax: RefCell::new(HashMap::new()),
        })
    }

    fn params(&self, eps: f64, delta: f64) -> Params {
        Params {
            eps,
            delta,
            stats: self.stats,
        }
    }

    fn ds(&self, eps: f64) -> Result<f64> {
        Ok(self.spectrum.ds(eps)?)
    }

    fn ds_pinched(&self, eps: f64) -> Result<f64> {
        Ok(ds_classical(&self.pinched, eps)?)
    }

    fn ds_ns(&self, eps: f64) -> Result<f64> {
        Ok(ds_classical(&self.ns, eps)?)
    }

    /// `(D_h^ε, gap)`.
    fn dh(&self, eps: f64) -> Result<(f64, f64)> {
        if let Some(v) = self.dh.borrow().get(&eps.to_bits()) {
            return Ok(*v);
        }
        let r = one_shot::dh(self.rho, self.sigma, eps, Method::Sdp)?;
        let v = (r.value, r.gap);
        self.dh.borrow_mut().insert(eps.to_bits(), v);
        Ok(v)
    }

    /// `(D_max^{√(1−ε)}, gap)`.
    fn dmax(&self, eps: f64) -> Result<(f64, f64)> {
        if let Some(v) = self.dmax.borrow().get(&eps.to_bits()) {
            return Ok(*v);
        }
        let r = one_shot::dmax_smooth(self.rho, self.sigma, (1.0 - eps).sqrt())?;
        let v = (r.value, r.gap);
        self.dmax.borrow_mut().insert(eps.to_bits(), v);
        Ok(v)
    }

    fn ds_dh(&self, eps: f64, delta: f64) -> Result<Vec<InequalityReport>> {
        if !(eps > 0.0 && delta > 0.0 && eps + delta < 1.0) {
            return Err(HierarchyError::BadParameters {
                eps,
                delta,
                need: "0 < ε, 0 < δ, ε + δ < 1",
            });
        }
        let p = self.params(eps, delta);
        let (h, gap) = self.dh(eps)?;
        Ok(vec![
            InequalityReport::new("le1-lower", self.ds(eps)?, h, &p, gap),
            InequalityReport::new("le1-upper", h, self.ds(eps + delta)? - delta.log2(), &p, gap),
        ])
    }

    fn prop4(&self, eps: f64, delta: f64) -> Result<Vec<InequalityReport>> {
        if !(0.0 < delta && delta < eps && eps < 1.0) {
            return Err(HierarchyError::BadParameters {
                eps,
                delta,
                need: "0 < δ < ε < 1",
            });
        }
        let p = self.params(eps, delta);
        let log_nu = (self.stats.nu as f64).log2();
        let ld = delta.log2();
        let (m, mgap) = self.dmax(eps)?;
        let (h, hgap) = self.dh(eps)?;
        let (h_lo, hlo_gap) = self.dh(eps - delta)?;
        Ok(vec![
            InequalityReport::new(
                "b-4",
                self.ds(eps - delta)? + 2.0 * ld - 2.0 - eps.log2(),
                m,
                &p,
                mgap,
            ),
            InequalityReport::new(
                "b-3",
                m,
                self.ds_pinched(eps)? + log_nu - (1.0 - eps).log2(),
                &p,
                mgap,
            ),
            InequalityReport::new("b-1", self.ds_pinched(eps - delta)?, self.ds_ns(eps)? - ld, &p, 0.0),
            InequalityReport::new(
                "b-2",
                self.ds_ns(eps - delta)? + ld - log_nu,
                self.ds_pinched(eps)?,
                &p,
                0.0,
            ),
            InequalityReport::new("b-7b", m, h + log_nu - (1.0 - eps).log2(), &p, mgap + hgap),
            InequalityReport::new(
                "b-8b",
                h_lo + 3.0 * ld - 3.0 * 3f64.log2() - eps.log2(),
                m,
                &p,
                mgap + hlo_gap,
            ),
        ])
    }

    fn thm3(&self, eps: f64, delta: f64) -> Result<Vec<InequalityReport>> {
        if !(0.0 < eps && eps < 1.0 && 0.0 < delta && delta < eps.min(1.0 - eps)) {
            return Err(HierarchyError::BadParameters {
                eps,
                delta,
                need: "0 < δ < min(ε, 1 − ε)",
            });
        }
        let p = self.params(eps, delta);
        let theta = self.stats.theta as f64;
        let ld = delta.log2();
        let (m, mgap) = self.dmax(eps)?;
        let (h, hgap) = self.dh(eps)?;
        let up = self.ds_ns(eps + delta)?;
        let down = self.ds_ns(eps - delta)?;
        let b5 = (256.0 * (eps + delta) * theta / (delta.powi(4) * (1.0 - eps - delta))).log2();
        Ok(vec![
            InequalityReport::new("b-5", h, up + b5, &p, hgap),
            InequalityReport::new("b-6", down - theta.log2() + ld, h, &p, hgap),
            InequalityReport::new(
                "b-7",
                m,
                up + theta.log2() - (delta * (1.0 - eps)).log2(),
                &p,
                mgap,
            ),
            InequalityReport::new(
                "b-8",
                down - (27.0 * eps * theta).log2() + 3.0 * ld,
                m,
                &p,
                mgap,
            ),
        ])
    }

    /// `ρ ⪯ ν E_σ(ρ)`, reported as `0 ≤ λ_min(ν E_σ(ρ) − ρ)`.
    fn pinching(&self, eps: f64, delta: f64) -> InequalityReport {
        let spaces = eigenspaces(self.sigma, CLUSTER_TOL);
        let pinched = pinch_with(&spaces, self.rho.op());
        let gap = pinched
            .scale(self.stats.nu as f64)
            .sub(self.rho.op())
            .min_eigenvalue();
        InequalityReport::new("pinching", 0.0, gap, &self.params(eps, delta), 0.0)
    }

    /// For commuting pairs the three spectra coincide; reported as
    /// `max |difference| ≤ 0`.
    fn unified(&self, eps: f64, delta: f64) -> Result<InequalityReport> {
        let a = self.ds(eps)?;
        let b = self.ds_pinched(eps)?;
        let c = self.ds_ns(eps)?;
        let spread = (a - b).abs().max((b - c).abs()).max((a - c).abs());
        Ok(InequalityReport::new(
            "commuting-unified",
            spread,
            0.0,
            &self.params(eps, delta),
            0.0,
        ))
    }
}

/// `D_s^ε ≤ D_h^ε ≤ D_s^{ε+δ} − log δ`.
pub fn verify_ds_dh(
    rho: &DensityOperator,
    sigma: &HermitianOperator,
    eps: f64,
    delta: f64,
) -> Result<Vec<InequalityReport>> {
    Evaluator::new(rho, sigma)?.ds_dh(eps, delta)
}

/// The six bounds relating `D_max^{√(1−ε)}`, the spectra of ρ, `E_σ(ρ)` and
/// the Nussbaum–Szkoła pair, and `D_h`, in the order b-4, b-3, b-1, b-2,
/// b-7b, b-8b.
pub fn verify_prop4(
    rho: &DensityOperator,
    sigma: &HermitianOperator,
    eps: f64,
    delta: f64,
) -> Result<Vec<InequalityReport>> {
    Evaluator::new(rho, sigma)?.prop4(eps, delta)
}

/// The four θ-bounds b-5, b-6, b-7, b-8 against the Nussbaum–Szkoła
/// spectrum.
pub fn verify_thm3(
    rho: &DensityOperator,
    sigma: &HermitianOperator,
    eps: f64,
    delta: f64,
) -> Result<Vec<InequalityReport>> {
    Evaluator::new(rho, sigma)?.thm3(eps, delta)
}

/// Every pairwise check on one instance.
pub fn verify_instance(inst: &Instance, eps: f64, delta: f64) -> Result<Vec<InequalityReport>> {
    let ev = Evaluator::new(&inst.rho, &inst.sigma)?;
    let mut out = ev.ds_dh(eps, delta)?;
    out.extend(ev.prop4(eps, delta)?);
    out.extend(ev.thm3(eps, delta)?);
    out.push(ev.pinching(eps, delta));
    if inst.kind == InstanceKind::Commuting {
        out.push(ev.unified(eps, delta)?);
    }
    let kind = inst.kind.name();
    Ok(out
        .into_iter()
        .map(|r| r.tagged(kind, &inst.dims, inst.seed))
        .collect())
}

/// Conditional entropy chains for `ρ_XAB = Σ_x p_x |x⟩⟨x| ⊗ φ^x_AB`
/// (`cq` stores `φ^x` on `A ⊗ B` with `dims_ab = [d_A, d_B]`), plus data
/// processing under pinching of A in the computational basis.
pub fn verify_hh_props(cq: &CqState, dims_ab: [usize; 2], eps: f64) -> Result<Vec<InequalityReport>> {
    let [da, db] = dims_ab;
    if da * db != cq.dim_b() {
        return Err(StateError::BadDims {
            dims: dims_ab.to_vec(),
            total: cq.dim_b(),
        }
        .into());
    }
    let nx = cq.num_symbols();
    let dims = [nx, da, db];
    let rho = cq.to_operator();
    let support = cq.probabilities().iter().filter(|&&p| p > 0.0).count();
    let log_x = (support.max(1) as f64).log2();

    let xab = DensityOperator::new(rho.clone())?;
    let axb = DensityOperator::new(permute_subsystems(&rho, &dims, &[1, 0, 2])?)?;
    let ab = DensityOperator::new(partial_trace_op(&rho, &dims, 0)?)?;
    let h_a_b = hh_optimized(&ab, [da, db], eps)?;
    let h_a_xb = hh_optimized(&axb, [da, nx * db], eps)?;
    let h_xa_b = hh_optimized(&xab, [nx * da, db], eps)?;

    // Pinching of A: keep entries diagonal in the A index.
    let n = rho.dim();
    let mut m = rho.matrix().clone();
    for i in 0..n {
        for j in 0..n {
            if (i / db) % da != (j / db) % da {
                m[(i, j)] = crate::linalg::c(0.0, 0.0);
            }
        }
    }
    let tau = DensityOperator::new(HermitianOperator::symmetrized(m))?;
    let h_tau = hh_optimized(&tau, [nx * da, db], eps)?;

    let p = Params {
        eps,
        delta: 0.0,
        stats: SpectralStats {
            nu: support,
            lambda: 0.0,
            theta: support,
        },
    };
    let (a, b, c) = (h_a_b.value, h_a_xb.value, h_xa_b.value);
    let (ga, gb, gc) = (h_a_b.gap, h_a_xb.gap, h_xa_b.gap);
    Ok(vec![
        InequalityReport::new("cq1-conditioning", b, a, &p, ga + gb),
        InequalityReport::new("cq1-classical", c - log_x, b, &p, gb + gc),
        InequalityReport::new("cq2-classical", b, c, &p, gb + gc),
        InequalityReport::new("cq2-joint", c, a + log_x, &p, ga + gc),
        InequalityReport::new("data-processing", c, h_tau.value, &p, gc + h_tau.gap),
    ]
    .into_iter()
    .map(|r| r.tagged("cq-xab", &dims, 0))
    .collect())
}

/// A block of suite entries with consecutive seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteBlock {
    pub kind: InstanceKind,
    pub dim: usize,
    pub first_seed: u64,
    pub count: u64,
    pub eps: f64,
    pub delta: f64,
}

const fn block(kind: InstanceKind, dim: usize, first_seed: u64, count: u64, eps: f64, delta: f64) -> SuiteBlock {
    SuiteBlock {
        kind,
        dim,
        first_seed,
        count,
        eps,
        delta,
    }
}

use InstanceKind::{Clustered, Commuting, Cq, Degenerate, Generic};

/// Default 200-instance suite.
pub const DEFAULT_SUITE: &[SuiteBlock] = &[
    block(Generic, 2, 0, 20, 0.3, 0.1),
    block(Generic, 2, 100, 20, 0.7, 0.2),
    block(Generic, 2, 200, 10, 0.1, 0.05),
    block(Generic, 3, 300, 15, 0.3, 0.1),
    block(Generic, 3, 400, 15, 0.7, 0.2),
    block(Generic, 4, 500, 10, 0.3, 0.1),
    block(Generic, 4, 600, 10, 0.1, 0.05),
    block(Commuting, 2, 700, 10, 0.3, 0.1),
    block(Commuting, 3, 800, 10, 0.7, 0.2),
    block(Commuting, 4, 900, 10, 0.5, 0.2),
    block(Cq, 2, 1000, 10, 0.3, 0.1),
    block(Cq, 3, 1100, 10, 0.7, 0.2),
    block(Cq, 4, 1200, 5, 0.5, 0.2),
    block(Degenerate, 2, 1300, 5, 0.5, 0.2),
    block(Degenerate, 3, 1400, 10, 0.3, 0.1),
    block(Degenerate, 4, 1500, 10, 0.7, 0.2),
    block(Clustered, 3, 1600, 10, 0.3, 0.1),
    block(Clustered, 4, 1700, 10, 0.7, 0.2),
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteEntry {
    pub kind: InstanceKind,
    pub dim: usize,
    pub seed: u64,
    pub eps: f64,
    pub delta: f64,
}

impl fmt::Display for SuiteEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} dim {} seed {} (ε = {}, δ = {})",
            self.kind, self.dim, self.seed, self.eps, self.delta
        )
    }
}

pub fn expand_suite(blocks: &[SuiteBlock]) -> Vec<SuiteEntry> {
    blocks
        .iter()
        .flat_map(|b| {
            (b.first_seed..b.first_seed + b.count).map(move |seed| SuiteEntry {
                kind: b.kind,
                dim: b.dim,
                seed,
                eps: b.eps,
                delta: b.delta,
            })
        })
        .collect()
}

pub fn default_suite() -> Vec<SuiteEntry> {
    expand_suite(DEFAULT_SUITE)
}

pub fn run_entry(e: &SuiteEntry) -> Result<Vec<InequalityReport>> {
    let inst = random_instance(e.dim, e.kind, e.seed)?;
    verify_instance(&inst, e.eps, e.delta)
}

/// Runs every entry; reports come back in suite order.
pub fn run_suite(entries: &[SuiteEntry], exec: Execution) -> Result<Vec<InequalityReport>> {
    let results = exec.map(entries, |e| {
        run_entry(e).map_err(|err| HierarchyError::Entry {
            entry: e.to_string(),
            source: Box::new(err),
        })
    });
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

pub const CSV_HEADER: [&str; 9] = ["name", "dims", "seed", "eps", "delta", "lhs", "rhs", "slack", "pass"];

pub fn write_csv<W: Write>(reports: &[InequalityReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        let dims = r
            .dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        w.write_record([
            r.name.to_string(),
            dims,
            r.seed.to_string(),
            sig12(r.eps),
            sig12(r.delta),
            sig12(r.lhs),
            sig12(r.rhs),
            sig12(r.slack),
            r.pass.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
