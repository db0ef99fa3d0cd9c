//! Exact simulation of randomness extraction and source compression with
//! quantum side information, for sources small enough to enumerate.
//!
//! Extraction uses seeded hash families and is scored by the purified
//! distance to an ideal key. Compression uses a hash encoder together with a
//! pretty good measurement built from a hypothesis test. Brute-force oracles
//! give the exact operational quantities on tiny instances.

use crate::linalg::{matrix_fn, singular_values, HermitianOperator, LinalgError, MatrixFn};
use crate::one_shot::{
    self, hh_conditional, hh_optimized, hmin_smooth, Method, OneShotError,
};
use crate::par::Execution;
use crate::sdp::{self, LinearMap, SdpBuilder, SdpError, MAX_TOTAL_DIM};
use crate::states::{CqState, StateError};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

/// Largest hash input length in bits.
pub const MAX_HASH_BITS: usize = 4;
/// Largest input length for the Toeplitz-only converse scan.
pub const MAX_TOEPLITZ_SCAN_BITS: usize = 3;
/// Largest input length for the scan over all functions.
pub const MAX_FUNCTION_SCAN_BITS: usize = 2;
pub const MAX_BRUTE_SYMBOLS: usize = 4;
pub const MAX_BRUTE_DIM_B: usize = 2;
/// Allowance when an SDP-evaluated error is compared against ε.
pub const VERIFY_TOL: f64 = 1e-9;
const UNIVERSALITY_TOL: f64 = 1e-12;
/// Distinct operators closer than this are merged in the d_sec program.
const MERGE_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error(transparent)]
    OneShot(#[from] OneShotError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("{what} is {got}, limit {limit}")]
    TooLarge {
        what: &'static str,
        got: usize,
        limit: usize,
    },
    #[error("need 0 < eta <= eps < 1, got eps = {eps}, eta = {eta}")]
    BadParameters { eps: f64, eta: f64 },
    #[error("epsilon {0} outside [0, 1)")]
    BadEpsilon(f64),
    #[error("invalid hash family: {0}")]
    BadFamily(String),
    #[error("hash family has domain {family} but the source has {symbols} symbols")]
    DomainMismatch { family: usize, symbols: usize },
}

pub type Result<T> = std::result::Result<T, TaskError>;

fn limit(what: &'static str, got: usize, max: usize) -> Result<()> {
    if got > max {
        Err(TaskError::TooLarge {
            what,
            got,
            limit: max,
        })
    } else {
        Ok(())
    }
}

fn check_pair(eps: f64, eta: f64) -> Result<()> {
    if eta > 0.0 && eta <= eps && eps < 1.0 {
        Ok(())
    } else {
        Err(TaskError::BadParameters { eps, eta })
    }
}

/// Bits needed to index `n` symbols, at least one.
fn index_bits(n: usize) -> usize {
    (usize::BITS - n.saturating_sub(1).leading_zeros()).max(1) as usize
}

// ---- hash families ----

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Seed {
    pub prob: f64,
    /// `table[x]` is the hash of `x`.
    pub table: Vec<usize>,
}

/// Seeded family of functions `{0..domain} → {0..range}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HashFamily {
    domain: usize,
    range: usize,
    seeds: Vec<Seed>,
}

impl HashFamily {
    pub fn new(domain: usize, range: usize, seeds: Vec<Seed>) -> Result<Self> {
        if range == 0 || seeds.is_empty() {
            return Err(TaskError::BadFamily("empty range or no seeds".into()));
        }
        let mut total = 0.0;
        for (s, seed) in seeds.iter().enumerate() {
            if !(seed.prob >= 0.0) || seed.table.len() != domain {
                return Err(TaskError::BadFamily(format!("seed {s} is malformed")));
            }
            if let Some(z) = seed.table.iter().find(|&&z| z >= range) {
                return Err(TaskError::BadFamily(format!("seed {s} maps to {z} >= {range}")));
            }
            total += seed.prob;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(TaskError::BadFamily(format!("seed probabilities sum to {total}")));
        }
        Ok(Self {
            domain,
            range,
            seeds,
        })
    }

    /// A single function.
    pub fn deterministic(range: usize, table: Vec<usize>) -> Result<Self> {
        Self::new(table.len(), range, vec![Seed { prob: 1.0, table }])
    }

    /// The map onto a single output.
    pub fn constant(domain: usize) -> Self {
        Self {
            domain,
            range: 1,
            seeds: vec![Seed {
                prob: 1.0,
                table: vec![0; domain],
            }],
        }
    }

    /// `x ↦ x` into a range of at least `domain` outputs.
    pub fn identity(domain: usize, range: usize) -> Result<Self> {
        if range < domain {
            return Err(TaskError::BadFamily(format!(
                "identity needs range >= {domain}, got {range}"
            )));
        }
        Self::deterministic(range, (0..domain).collect())
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn range(&self) -> usize {
        self.range
    }

    pub fn range_bits(&self) -> f64 {
        (self.range as f64).log2()
    }

    pub fn seeds(&self) -> &[Seed] {
        &self.seeds
    }

    /// The same functions restricted to the first `domain` inputs.
    pub fn restrict(&self, domain: usize) -> Result<Self> {
        if domain > self.domain {
            return Err(TaskError::DomainMismatch {
                family: self.domain,
                symbols: domain,
            });
        }
        let seeds = self
            .seeds
            .iter()
            .map(|s| Seed {
                prob: s.prob,
                table: s.table[..domain].to_vec(),
            })
            .collect();
        Ok(Self {
            domain,
            range: self.range,
            seeds,
        })
    }

    /// `max_{x≠x′} Pr_s[h_s(x) = h_s(x′)]`, zero for a one-point domain.
    pub fn max_collision(&self) -> f64 {
        let mut worst = 0.0f64;
        for x in 0..self.domain {
            for y in x + 1..self.domain {
                let p: f64 = self
                    .seeds
                    .iter()
                    .filter(|s| s.table[x] == s.table[y])
                    .map(|s| s.prob)
                    .sum();
                worst = worst.max(p);
            }
        }
        worst
    }

    pub fn is_two_universal(&self) -> bool {
        self.max_collision() <= 1.0 / self.range as f64 + UNIVERSALITY_TOL
    }
}

/// All binary Toeplitz maps GF(2)^k → GF(2)^ℓ with a uniform seed.
///
/// Matrix entry (i, j) is diagonal bit `i − j + k − 1`, so there are
/// `2^{k+ℓ−1}` seeds. For ℓ = 0 the family is the single constant map.
pub fn toeplitz_family(k: usize, l: usize) -> Result<HashFamily> {
    if k == 0 || l > k {
        return Err(TaskError::BadFamily(format!("need 1 <= k and l <= k, got k = {k}, l = {l}")));
    }
    limit("hash input bits", k, MAX_HASH_BITS)?;
    let domain = 1usize << k;
    if l == 0 {
        return Ok(HashFamily::constant(domain));
    }
    let diagonals = k + l - 1;
    let count = 1usize << diagonals;
    let prob = 1.0 / count as f64;
    let seeds = (0..count)
        .map(|t| {
            let table = (0..domain)
                .map(|x| {
                    (0..l).fold(0usize, |z, i| {
                        let parity = (0..k)
                            .filter(|&j| (t >> (i + k - 1 - j)) & 1 == 1 && (x >> j) & 1 == 1)
                            .count()
                            & 1;
                        z | (parity << i)
                    })
                })
                .collect();
            Seed { prob, table }
        })
        .collect();
    let family = HashFamily::new(domain, 1 << l, seeds)?;
    debug_assert!(family.is_two_universal());
    Ok(family)
}

/// Toeplitz hashing of `num_symbols` inputs down to `l` bits, on the
/// smallest power-of-two domain that holds them.
fn hashing_for(num_symbols: usize, l: usize) -> Result<HashFamily> {
    let k = index_bits(num_symbols);
    toeplitz_family(k, l.min(k))?.restrict(num_symbols)
}

// ---- extraction ----

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtractionProtocol {
    pub family: HashFamily,
}

impl ExtractionProtocol {
    pub fn output_bits(&self) -> f64 {
        self.family.range_bits()
    }
}

/// `τ_ZBS = Σ_s p_s |s⟩⟨s| ⊗ Σ_z |z⟩⟨z| ⊗ ω_{s,z}` with
/// `ω_{s,z} = Σ_{x : h_s(x) = z} p_x φ_x`.
#[derive(Clone, Debug)]
pub struct ExtractedState {
    num_z: usize,
    dim_b: usize,
    /// `(p_s, [ω_{s,z}]_z)`.
    blocks: Vec<(f64, Vec<HermitianOperator>)>,
}

impl ExtractedState {
    pub fn num_z(&self) -> usize {
        self.num_z
    }

    pub fn dim_b(&self) -> usize {
        self.dim_b
    }

    pub fn blocks(&self) -> &[(f64, Vec<HermitianOperator>)] {
        &self.blocks
    }

    pub fn trace(&self) -> f64 {
        self.blocks
            .iter()
            .map(|(p, om)| p * om.iter().map(|o| o.trace()).sum::<f64>())
            .sum()
    }

    /// Distribution of Z for seed `s`.
    pub fn key_distribution(&self, s: usize) -> Vec<f64> {
        self.blocks[s].1.iter().map(|o| o.trace()).collect()
    }
}

pub fn apply_extraction(rho: &CqState, protocol: &ExtractionProtocol) -> Result<ExtractedState> {
    let fam = &protocol.family;
    if fam.domain < rho.num_symbols() {
        return Err(TaskError::DomainMismatch {
            family: fam.domain,
            symbols: rho.num_symbols(),
        });
    }
    let db = rho.dim_b();
    let blocks = fam
        .seeds
        .iter()
        .map(|seed| {
            let mut om = vec![HermitianOperator::zeros(db); fam.range];
            for x in 0..rho.num_symbols() {
                let z = seed.table[x];
                om[z] = om[z].add(&rho.weighted(x));
            }
            (seed.prob, om)
        })
        .collect();
    Ok(ExtractedState {
        num_z: fam.range,
        dim_b: db,
        blocks,
    })
}

/// Security of an extracted key.
#[derive(Clone, Debug)]
pub struct Dsec {
    /// Purified distance achieved by `sigma_b`; an upper bound on d_sec.
    pub value: f64,
    /// Lower bound on d_sec from the dual of the fidelity program.
    pub lower: f64,
    /// Normalized σ_B realizing `value`.
    pub sigma_b: HermitianOperator,
}

/// `‖√a √b‖₁` for positive semidefinite `a`, `b`.
fn root_fidelity(a: &HermitianOperator, b: &HermitianOperator) -> Result<f64> {
    let sa = matrix_fn(a, MatrixFn::Sqrt)?;
    let sb = matrix_fn(b, MatrixFn::Sqrt)?;
    Ok(singular_values(&(sa.matrix() * sb.matrix())).iter().sum())
}

fn distance_from_fidelity(f: f64) -> f64 {
    let f = f.clamp(0.0, 1.0);
    (1.0 - f * f).max(0.0).sqrt()
}

/// Nearest density operator: negative eigenvalues dropped, trace rescaled.
fn to_state(a: &HermitianOperator) -> HermitianOperator {
    let es = a.eig();
    let clipped = es.reconstruct_with(|x| x.max(0.0));
    let tr = clipped.trace();
    if tr > 0.0 {
        clipped.scale(1.0 / tr)
    } else {
        HermitianOperator::identity(a.dim()).scale(1.0 / a.dim() as f64)
    }
}

/// `d_sec = min_{σ_B} P(τ_ZBS, π_Z ⊗ σ_B ⊗ τ_S)`.
///
/// Both sides are block diagonal in (s, z), so the fidelity is
/// `Σ_{s,z} p_s |Z|^{-1/2} ‖√ω_{s,z} √σ_B‖₁`, maximized over σ_B by an SDP
/// with one block `[[1, K†], [K, σ_B]]` per distinct ω.
pub fn dsec_exact(tau: &ExtractedState) -> Result<Dsec> {
    let db = tau.dim_b;
    let marginal = tau.blocks.iter().fold(HermitianOperator::zeros(db), |acc, (p, om)| {
        om.iter().fold(acc, |a, o| a.add(&o.scale(*p)))
    });
    if tau.num_z == 1 {
        // σ_B = τ_B makes the two states equal.
        return Ok(Dsec {
            value: 0.0,
            lower: 0.0,
            sigma_b: to_state(&marginal),
        });
    }
    let inv_sqrt_z = 1.0 / (tau.num_z as f64).sqrt();
    let mut terms: Vec<(f64, &HermitianOperator)> = Vec::new();
    for (p, om) in &tau.blocks {
        for o in om {
            if o.trace() <= 0.0 || *p == 0.0 {
                continue;
            }
            let w = p * inv_sqrt_z;
            match terms.iter_mut().find(|(_, t)| t.sub(o).max_abs_entry() <= MERGE_TOL) {
                Some(slot) => slot.0 += w,
                None => terms.push((w, o)),
            }
        }
    }
    let value_at = |sigma: &HermitianOperator| -> Result<f64> {
        let mut f = 0.0;
        for (w, o) in &terms {
            f += w * root_fidelity(o, sigma)?;
        }
        Ok(f)
    };
    if db == 1 {
        let one = HermitianOperator::identity(1);
        let d = distance_from_fidelity(value_at(&one)?);
        return Ok(Dsec {
            value: d,
            lower: d,
            sigma_b: one,
        });
    }
    let factors: Vec<_> = terms
        .iter()
        .map(|(w, o)| (*w, one_shot::support_columns(o, true)))
        .collect();
    let total = db + factors.iter().map(|(_, v)| v.ncols() + db).sum::<usize>();
    limit("d_sec program dimension", total, MAX_TOTAL_DIM)?;

    let mut b = SdpBuilder::new();
    let sigma = b.psd(db);
    b.scalar_equality(&[(sigma, &HermitianOperator::identity(db))], 1.0)?;
    for (w, v) in &factors {
        let r = v.ncols();
        let block = b.psd(r + db);
        b.fix(block.sub(0, r), &HermitianOperator::identity(r))?;
        b.matrix_equality(
            &[
                (block.sub(r, db), LinearMap::Scaled(1.0)),
                (sigma, LinearMap::Scaled(-1.0)),
            ],
            &HermitianOperator::zeros(db),
        )?;
        // −w Re tr(V†K) as ⟨H, block⟩ with V/2 in the off-diagonal corners.
        let mut h = crate::linalg::CMatrix::zeros(r + db, r + db);
        let half = v * crate::linalg::c(-0.5 * w, 0.0);
        h.view_mut((r, 0), (db, r)).copy_from(&half);
        h.view_mut((0, r), (r, db)).copy_from(&half.adjoint());
        b.minimize(block, &HermitianOperator::symmetrized(h))?;
    }
    let sol = sdp::solve(&b.build()?, one_shot::options());
    one_shot::require_optimal(&sol, one_shot::SMOOTHED_GAP_TOL)?;
    let sigma_b = to_state(&sol.primal(sigma));
    let f_feasible = value_at(&sigma_b)?;
    let f_upper = (-sol.dual_value).max(f_feasible);
    Ok(Dsec {
        value: distance_from_fidelity(f_feasible),
        lower: distance_from_fidelity(f_upper),
        sigma_b,
    })
}

#[derive(Clone, Debug)]
pub struct ExtractionOutcome {
    /// Prescribed key length ℓ in bits.
    pub length: usize,
    /// `H_min^{ε−η}(X|B)` used for the prescription.
    pub hmin: f64,
    pub protocol: ExtractionProtocol,
    pub dsec: Dsec,
    pub verified: bool,
}

/// Two-universal hashing to `ℓ = ⌊H_min^{ε−η}(X|B) + 4 log η − 2⌋` bits
/// (zero when negative), then exact evaluation of d_sec.
pub fn direct_extraction(rho: &CqState, eps: f64, eta: f64) -> Result<ExtractionOutcome> {
    check_pair(eps, eta)?;
    let nx = rho.num_symbols();
    let k = index_bits(nx);
    limit("hash input bits", k, MAX_HASH_BITS)?;
    let rho_xb = rho.to_density()?;
    let hmin = hmin_smooth(&rho_xb, [nx, rho.dim_b()], eps - eta)?.value;
    let raw = (hmin + 4.0 * eta.log2() - 2.0).floor();
    let length = if raw > 0.0 { (raw as usize).min(k) } else { 0 };
    let protocol = ExtractionProtocol {
        family: hashing_for(nx, length)?,
    };
    let dsec = dsec_exact(&apply_extraction(rho, &protocol)?)?;
    let verified = dsec.value <= eps + VERIFY_TOL;
    Ok(ExtractionOutcome {
        length,
        hmin,
        protocol,
        dsec,
        verified,
    })
}

/// `(H_min^{ε−η} − log(1/η⁴) − 3, H_min^ε)`, the bracket for ℓ^ε.
pub fn extraction_bounds(rho: &CqState, eps: f64, eta: f64) -> Result<(f64, f64)> {
    check_pair(eps, eta)?;
    let rho_xb = rho.to_density()?;
    let dims = [rho.num_symbols(), rho.dim_b()];
    let lower = hmin_smooth(&rho_xb, dims, eps - eta)?.value + 4.0 * eta.log2() - 3.0;
    let upper = hmin_smooth(&rho_xb, dims, eps)?.value;
    Ok((lower, upper))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConverseScope {
    /// Every function X → Z.
    AllFunctions,
    /// Every member of the Toeplitz family.
    Toeplitz,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConverseLength {
    pub length: usize,
    pub functions: usize,
    /// Smallest certified lower bound on d_sec over the scanned functions.
    pub min_dsec: f64,
    pub refuted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConverseReport {
    pub scope: ConverseScope,
    pub eps: f64,
    pub hmin: f64,
    /// Every length ℓ with H_min^ε < ℓ ≤ ⌈log |X|⌉.
    pub lengths: Vec<ConverseLength>,
}

impl ConverseReport {
    /// True when every scanned length is out of reach.
    pub fn holds(&self) -> bool {
        self.lengths.iter().all(|l| l.refuted)
    }
}

fn all_functions(domain: usize, range: usize) -> Vec<Vec<usize>> {
    let count = range.pow(domain as u32);
    (0..count)
        .map(|mut i| {
            (0..domain)
                .map(|_| {
                    let z = i % range;
                    i /= range;
                    z
                })
                .collect()
        })
        .collect()
}

/// Checks that no key longer than `H_min^ε(X|B)` reaches d_sec ≤ ε.
///
/// A seeded protocol has fidelity `max_σ Σ_s p_s F_s(σ) ≤ max_s max_σ F_s(σ)`,
/// so its d_sec is at least that of its best single function. Scanning
/// every function therefore covers every protocol built from them.
pub fn converse_scan(rho: &CqState, eps: f64, scope: ConverseScope) -> Result<ConverseReport> {
    if !(0.0..1.0).contains(&eps) {
        return Err(TaskError::BadEpsilon(eps));
    }
    let nx = rho.num_symbols();
    let k = index_bits(nx);
    let max_bits = match scope {
        ConverseScope::AllFunctions => MAX_FUNCTION_SCAN_BITS,
        ConverseScope::Toeplitz => MAX_TOEPLITZ_SCAN_BITS,
    };
    limit("scan input bits", k, max_bits)?;
    let rho_xb = rho.to_density()?;
    let hmin = hmin_smooth(&rho_xb, [nx, rho.dim_b()], eps)?.value;
    // Smallest integer strictly above H_min, with room for solver error.
    let first = ((hmin + 1e-7).floor() + 1.0).max(1.0) as usize;
    let mut lengths = Vec::new();
    for l in first..=k {
        let tables: Vec<Vec<usize>> = match scope {
            ConverseScope::AllFunctions => all_functions(nx, 1 << l),
            ConverseScope::Toeplitz => hashing_for(nx, l)?
                .seeds
                .into_iter()
                .map(|s| s.table)
                .collect(),
        };
        let range = 1usize << l;
        let dsecs = Execution::default().map(&tables, |table| -> Result<f64> {
            let protocol = ExtractionProtocol {
                family: HashFamily::deterministic(range, table.clone())?,
            };
            Ok(dsec_exact(&apply_extraction(rho, &protocol)?)?.lower)
        });
        let min_dsec = dsecs
            .into_iter()
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        lengths.push(ConverseLength {
            length: l,
            functions: tables.len(),
            min_dsec,
            refuted: min_dsec > eps,
        });
    }
    Ok(ConverseReport {
        scope,
        eps,
        hmin,
        lengths,
    })
}

// ---- compression ----

/// POVM for one (seed, codeword) pair: `outcomes[x]` guesses x, the rest
/// abstains.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub outcomes: Vec<HermitianOperator>,
    pub abstain: HermitianOperator,
}

impl Decoder {
    /// Largest entry of `Σ_x M_x + abstain − 1`.
    pub fn completeness_error(&self) -> f64 {
        let d = self.abstain.dim();
        self.outcomes
            .iter()
            .fold(self.abstain.clone(), |acc, m| acc.add(m))
            .sub(&HermitianOperator::identity(d))
            .max_abs_entry()
    }

    /// Most negative eigenvalue over all outcomes, or zero.
    pub fn positivity_violation(&self) -> f64 {
        self.outcomes
            .iter()
            .chain(std::iter::once(&self.abstain))
            .map(|m| m.min_eigenvalue())
            .fold(0.0, f64::min)
    }
}

#[derive(Clone, Debug)]
pub struct CompressionProtocol {
    pub encoder: HashFamily,
    /// `decoders[s][m]`.
    pub decoders: Vec<Vec<Decoder>>,
}

impl CompressionProtocol {
    pub fn codebook_bits(&self) -> f64 {
        self.encoder.range_bits()
    }

    /// POVM invariants within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        self.decoders
            .iter()
            .flatten()
            .all(|d| d.completeness_error() <= tol && d.positivity_violation() >= -tol)
    }
}

/// Diagonal blocks `Q_B^x` of a test on `X ⊗ B`, i.e. its pinching on X.
pub fn classical_blocks(q: &HermitianOperator, num_x: usize, dim_b: usize) -> Vec<HermitianOperator> {
    (0..num_x)
        .map(|x| {
            let m = q
                .matrix()
                .view((x * dim_b, x * dim_b), (dim_b, dim_b))
                .into_owned();
            HermitianOperator::symmetrized(m)
        })
        .collect()
}

/// Pretty good measurement per codeword class:
/// `M_x = S^{-1/2} Q^x S^{-1/2}` with `S = Σ_{z ∈ class} Q^z`, inverse on
/// the support of S. The abstain outcome takes the remainder, so an
/// all-zero class always abstains.
pub fn pgm_decoder(q_blocks: &[HermitianOperator], encoder: &HashFamily) -> Result<CompressionProtocol> {
    let nx = q_blocks.len();
    if encoder.domain != nx {
        return Err(TaskError::DomainMismatch {
            family: encoder.domain,
            symbols: nx,
        });
    }
    let db = q_blocks.first().map_or(1, |q| q.dim());
    let identity = HermitianOperator::identity(db);
    let mut decoders = Vec::with_capacity(encoder.seeds.len());
    for seed in &encoder.seeds {
        let mut per_m = Vec::with_capacity(encoder.range);
        for m in 0..encoder.range {
            let class: Vec<usize> = (0..nx).filter(|&x| seed.table[x] == m).collect();
            let total = class
                .iter()
                .fold(HermitianOperator::zeros(db), |acc, &x| acc.add(&q_blocks[x]));
            let mut outcomes = vec![HermitianOperator::zeros(db); nx];
            match matrix_fn(&total, MatrixFn::InverseSqrtOnSupport) {
                Ok(root) => {
                    for &x in &class {
                        outcomes[x] = q_blocks[x].conjugate_by(root.matrix());
                    }
                }
                Err(LinalgError::EmptySupport) => {}
                Err(e) => return Err(e.into()),
            }
            let abstain = outcomes.iter().fold(identity.clone(), |acc, o| acc.sub(o));
            per_m.push(Decoder { outcomes, abstain });
        }
        decoders.push(per_m);
    }
    Ok(CompressionProtocol {
        encoder: encoder.clone(),
        decoders,
    })
}

fn check_protocol(rho: &CqState, protocol: &CompressionProtocol) -> Result<()> {
    if protocol.encoder.domain != rho.num_symbols() {
        return Err(TaskError::DomainMismatch {
            family: protocol.encoder.domain,
            symbols: rho.num_symbols(),
        });
    }
    Ok(())
}

/// `E_s Σ_x p_x (1 − tr[φ_x M_x^{s, e_s(x)}])`; abstaining counts as an error.
pub fn perr_exact(rho: &CqState, protocol: &CompressionProtocol) -> Result<f64> {
    check_protocol(rho, protocol)?;
    let mut err = 0.0;
    for (seed, decoders) in protocol.encoder.seeds.iter().zip(&protocol.decoders) {
        for (x, (p, phi)) in rho.entries().iter().enumerate() {
            let hit = phi.op().inner(&decoders[seed.table[x]].outcomes[x]);
            err += seed.prob * p * (1.0 - hit);
        }
    }
    Ok(err)
}

/// Monte Carlo estimate of the error probability: draws (s, x), measures
/// the decoder on φ_x, counts wrong guesses and abstentions. Returns the
/// estimate and its standard error.
pub fn perr_monte_carlo<R: Rng + ?Sized>(
    rho: &CqState,
    protocol: &CompressionProtocol,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    use rand::distributions::{Distribution, WeightedIndex};
    check_protocol(rho, protocol)?;
    let nx = rho.num_symbols();
    let bad = |e: rand::distributions::WeightedError| TaskError::BadFamily(e.to_string());
    let seed_dist =
        WeightedIndex::new(protocol.encoder.seeds.iter().map(|s| s.prob)).map_err(bad)?;
    let x_dist = WeightedIndex::new(rho.probabilities()).map_err(bad)?;
    // Outcome distributions per (s, x); index nx is the abstain outcome.
    let mut outcome = Vec::with_capacity(protocol.decoders.len());
    for (seed, decoders) in protocol.encoder.seeds.iter().zip(&protocol.decoders) {
        let mut row = Vec::with_capacity(nx);
        for (x, (_, phi)) in rho.entries().iter().enumerate() {
            let dec = &decoders[seed.table[x]];
            let weights = dec
                .outcomes
                .iter()
                .chain(std::iter::once(&dec.abstain))
                .map(|m| phi.op().inner(m).max(0.0));
            row.push(WeightedIndex::new(weights).map_err(bad)?);
        }
        outcome.push(row);
    }
    let mut errors = 0usize;
    for _ in 0..samples {
        let s = seed_dist.sample(rng);
        let x = x_dist.sample(rng);
        if outcome[s][x].sample(rng) != x {
            errors += 1;
        }
    }
    let p = errors as f64 / samples as f64;
    Ok((p, (p * (1.0 - p) / samples as f64).sqrt()))
}

#[derive(Clone, Debug)]
pub struct CompressionOutcome {
    /// Prescribed length m in bits (zero when the formula is negative).
    pub length: usize,
    /// `H_h^{ε−η}(X|B)_{ρ|ρ}` used for the prescription.
    pub hh: f64,
    pub protocol: CompressionProtocol,
    pub perr: f64,
    pub verified: bool,
}

/// Hash encoder plus pretty good measurement at
/// `m = ⌈H_h^{ε−η}(X|B)_{ρ|ρ} + log((2 + c + 1/c)/(η − c(ε−η)))⌉`,
/// `c = η/(2ε − η)`, then exact evaluation of the error.
///
/// A codebook of `min(m, ⌈log |X|⌉)` bits is used: an injective encoder
/// already decodes as well as any larger codebook.
pub fn direct_compression(rho: &CqState, eps: f64, eta: f64) -> Result<CompressionOutcome> {
    check_pair(eps, eta)?;
    let nx = rho.num_symbols();
    let db = rho.dim_b();
    let k = index_bits(nx);
    limit("hash input bits", k, MAX_HASH_BITS)?;
    let rho_xb = rho.to_density()?;
    let hh = hh_conditional(&rho_xb, &rho.marginal_b(), [nx, db], eps - eta, Method::NeymanPearson)?;
    let q = hh.test().ok_or(TaskError::BadFamily("hypothesis test has no witness".into()))?;
    let c = eta / (2.0 * eps - eta);
    let raw = (hh.value + ((2.0 + c + 1.0 / c) / (eta - c * (eps - eta))).log2()).ceil();
    let length = if raw > 0.0 { raw as usize } else { 0 };
    let encoder = if length >= k {
        HashFamily::identity(nx, 1 << k)?
    } else {
        hashing_for(nx, length)?
    };
    let protocol = pgm_decoder(&classical_blocks(q, nx, db), &encoder)?;
    let perr = perr_exact(rho, &protocol)?;
    Ok(CompressionOutcome {
        length,
        hh: hh.value,
        verified: perr <= eps + VERIFY_TOL,
        protocol,
        perr,
    })
}

/// `(H_h^ε(X|B), H_h^{ε−η}(X|B)_{ρ|ρ} + log(ε/η²) + 3)`, the bracket for m^ε.
pub fn compression_bounds(rho: &CqState, eps: f64, eta: f64) -> Result<(f64, f64)> {
    check_pair(eps, eta)?;
    let rho_xb = rho.to_density()?;
    let dims = [rho.num_symbols(), rho.dim_b()];
    let lower = hh_optimized(&rho_xb, dims, eps)?.value;
    let cond = hh_conditional(&rho_xb, &rho.marginal_b(), dims, eps - eta, Method::NeymanPearson)?;
    Ok((lower, cond.value + (eps / (eta * eta)).log2() + 3.0))
}

/// Optimal success probability `max Σ_x tr(A_x M_x)` over POVMs, for the
/// sub-normalized ensemble `A_x = p_x φ_x`.
pub fn min_error_success(ensemble: &[HermitianOperator]) -> Result<f64> {
    match ensemble {
        [] => return Ok(0.0),
        [a] => return Ok(a.trace()),
        _ => {}
    }
    let d = ensemble[0].dim();
    if d == 1 {
        return Ok(ensemble.iter().map(|a| a.trace()).fold(f64::NEG_INFINITY, f64::max));
    }
    let mut b = SdpBuilder::new();
    let slots: Vec<_> = ensemble.iter().map(|_| b.psd(d)).collect();
    let terms: Vec<_> = slots.iter().map(|&s| (s, LinearMap::Scaled(1.0))).collect();
    b.matrix_equality(&terms, &HermitianOperator::identity(d))?;
    for (&s, a) in slots.iter().zip(ensemble) {
        b.minimize(s, &a.scale(-1.0))?;
    }
    let sol = sdp::solve(&b.build()?, one_shot::options());
    one_shot::require_optimal(&sol, one_shot::NEAR_OPTIMAL_TOL)?;
    Ok(-sol.primal_value)
}

/// Exact `m^ε(X|B)`: the smallest m such that some deterministic encoder
/// into `min(2^m, |X|)` codewords, decoded optimally per codeword class,
/// errs with probability at most ε.
pub fn brute_force_m(rho: &CqState, eps: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&eps) {
        return Err(TaskError::BadEpsilon(eps));
    }
    let nx = rho.num_symbols();
    limit("source symbols", nx, MAX_BRUTE_SYMBOLS)?;
    limit("side information dimension", rho.dim_b(), MAX_BRUTE_DIM_B)?;
    // Optimal success for every subset of symbols, indexed by bitmask.
    let masks: Vec<usize> = (0..1usize << nx).collect();
    let success = Execution::default()
        .map(&masks, |&mask| {
            let ens: Vec<_> = (0..nx)
                .filter(|x| mask >> x & 1 == 1)
                .map(|x| rho.weighted(x))
                .collect();
            min_error_success(&ens)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let mut m = 0usize;
    loop {
        let size = (1usize << m).min(nx);
        if size == nx {
            return Ok(m);
        }
        let best_error = all_functions(nx, size)
            .iter()
            .map(|table| {
                let hit: f64 = (0..size)
                    .map(|z| {
                        let mask = (0..nx).filter(|&x| table[x] == z).fold(0, |a, x| a | 1 << x);
                        success[mask]
                    })
                    .sum();
                1.0 - hit
            })
            .fold(f64::INFINITY, f64::min);
        if best_error <= eps + VERIFY_TOL {
            return Ok(m);
        }
        m += 1;
    }
}
