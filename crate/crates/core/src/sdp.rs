//! Small dense semidefinite programs over complex Hermitian block-diagonal
//! variables.
//!
//! Primal: minimize ⟨C, X⟩ subject to ⟨A_i, X⟩ = b_i and X ⪰ 0.
//! Dual: maximize bᵀy subject to Σ y_i A_i + S = C and S ⪰ 0.
//! The inner product is ⟨A, X⟩ = Re tr(A X). Scalars are 1×1 blocks.
//!
//! The solver is an infeasible primal-dual interior-point method with the
//! HKM search direction and a Mehrotra predictor-corrector step.

use crate::linalg::{c, CMatrix, HermitianOperator, C64};
use nalgebra::{Cholesky, DMatrix, DVector};
use std::fmt::Write as _;
use std::ops::Range;
use thiserror::Error;

pub const DEFAULT_GAP_TOL: f64 = 1e-8;
pub const DEFAULT_FEAS_TOL: f64 = 1e-9;

/// Total matrix dimension accepted by the solver.
pub const MAX_TOTAL_DIM: usize = 256;
/// Iterations without improvement before the solver gives up.
const STAGNATION_ITERS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("slot of dimension {slot} does not match operator of dimension {op}")]
    DimensionMismatch { slot: usize, op: usize },
    #[error("linear map {map} cannot act on a slot of dimension {slot} with output dimension {out}")]
    BadMap {
        map: &'static str,
        slot: usize,
        out: usize,
    },
    #[error("total dimension {0} exceeds {MAX_TOTAL_DIM}")]
    TooLarge(usize),
    #[error("fidelity target {0} outside [0, 1]")]
    BadFidelityTarget(f64),
    #[error("fidelity reference has trace {0}; only normalized references are supported")]
    SubnormalizedReference(f64),
    #[error("slot extends past its block")]
    BadSlot,
}

/// A square sub-range `[offset, offset + dim)` of one variable block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Slot {
    pub block: usize,
    pub offset: usize,
    pub dim: usize,
}

impl Slot {
    pub fn sub(self, offset: usize, dim: usize) -> Slot {
        assert!(offset + dim <= self.dim, "sub-slot out of range");
        Slot {
            block: self.block,
            offset: self.offset + offset,
            dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    block: usize,
    row: usize,
    col: usize,
    val: C64,
}

/// Block-sparse Hermitian operator, both triangles stored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseOp {
    entries: Vec<Entry>,
}

impl SparseOp {
    fn push_dense(&mut self, slot: Slot, coef: &CMatrix, scale: f64) {
        for r in 0..coef.nrows() {
            for col in 0..coef.ncols() {
                let v = coef[(r, col)] * scale;
                if v.re != 0.0 || v.im != 0.0 {
                    self.entries.push(Entry {
                        block: slot.block,
                        row: slot.offset + r,
                        col: slot.offset + col,
                        val: v,
                    });
                }
            }
        }
    }

    fn canonicalize(&mut self) {
        self.entries
            .sort_by_key(|e| (e.block, e.row, e.col));
        let mut merged: Vec<Entry> = Vec::with_capacity(self.entries.len());
        for e in self.entries.drain(..) {
            match merged.last_mut() {
                Some(last) if (last.block, last.row, last.col) == (e.block, e.row, e.col) => {
                    last.val += e.val
                }
                _ => merged.push(e),
            }
        }
        merged.retain(|e| e.val.norm() > 1e-300);
        self.entries = merged;
    }

    fn inner(&self, x: &[CMatrix]) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let z = x[e.block][(e.col, e.row)];
                e.val.re * z.re - e.val.im * z.im
            })
            .sum()
    }

    fn add_to(&self, out: &mut [CMatrix], w: f64) {
        for e in &self.entries {
            out[e.block][(e.row, e.col)] += e.val * w;
        }
    }

    fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|e| e.val.norm_sqr()).sum()
    }

    fn scale(&mut self, s: f64) {
        for e in &mut self.entries {
            e.val *= s;
        }
    }
}

/// Linear maps from a slot into a Hermitian output space, with adjoints.
#[derive(Clone, Debug)]
pub enum LinearMap {
    /// `X ↦ c X`
    Scaled(f64),
    /// `X_B ↦ 1_A ⊗ X_B`
    KronIdentityLeft { dim_a: usize },
    /// `X_AB ↦ tr_A X_AB`
    PartialTraceFirst { dim_a: usize },
    /// Scalar slot `m ↦ m M`
    ScalarTimes(HermitianOperator),
    /// `X ↦ V X V†`
    Congruence(CMatrix),
}

impl LinearMap {
    fn name(&self) -> &'static str {
        match self {
            LinearMap::Scaled(_) => "scaled",
            LinearMap::KronIdentityLeft { .. } => "kron-identity-left",
            LinearMap::PartialTraceFirst { .. } => "partial-trace-first",
            LinearMap::ScalarTimes(_) => "scalar-times",
            LinearMap::Congruence(_) => "congruence",
        }
    }

    fn check(&self, slot: usize, out: usize) -> Result<(), SdpError> {
        let ok = match self {
            LinearMap::Scaled(_) => slot == out,
            LinearMap::KronIdentityLeft { dim_a } => dim_a * slot == out,
            LinearMap::PartialTraceFirst { dim_a } => *dim_a * out == slot,
            LinearMap::ScalarTimes(m) => slot == 1 && m.dim() == out,
            LinearMap::Congruence(v) => v.ncols() == slot && v.nrows() == out,
        };
        if ok {
            Ok(())
        } else {
            Err(SdpError::BadMap {
                map: self.name(),
                slot,
                out,
            })
        }
    }

    /// Adjoint applied to `e`, a matrix on the output space.
    fn adjoint(&self, e: &CMatrix, slot: usize) -> CMatrix {
        match self {
            LinearMap::Scaled(s) => e * c(*s, 0.0),
            LinearMap::KronIdentityLeft { dim_a } => {
                let mut out = CMatrix::zeros(slot, slot);
                for a in 0..*dim_a {
                    out += e.view((a * slot, a * slot), (slot, slot));
                }
                out
            }
            LinearMap::PartialTraceFirst { dim_a } => {
                CMatrix::identity(*dim_a, *dim_a).kronecker(e)
            }
            LinearMap::ScalarTimes(m) => {
                let mut t = c(0.0, 0.0);
                for r in 0..m.dim() {
                    for col in 0..m.dim() {
                        t += m.matrix()[(r, col)] * e[(col, r)];
                    }
                }
                CMatrix::from_element(1, 1, c(t.re, 0.0))
            }
            LinearMap::Congruence(v) => v.adjoint() * e * v,
        }
    }
}

/// Hermitian basis of `d × d` matrices: `E_jj`, `(E_jk + E_kj)/2` and
/// `(−iE_jk + iE_kj)/2` for j < k. The pairing ⟨E, Y⟩ reads off `Y_jj`,
/// `Re Y_jk` and `−Im Y_jk`.
fn hermitian_basis(d: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(d * d);
    for j in 0..d {
        let mut e = CMatrix::zeros(d, d);
        e[(j, j)] = c(1.0, 0.0);
        out.push(e);
    }
    for j in 0..d {
        for k in j + 1..d {
            let mut re = CMatrix::zeros(d, d);
            re[(j, k)] = c(0.5, 0.0);
            re[(k, j)] = c(0.5, 0.0);
            out.push(re);
            let mut im = CMatrix::zeros(d, d);
            im[(j, k)] = c(0.0, -0.5);
            im[(k, j)] = c(0.0, 0.5);
            out.push(im);
        }
    }
    out
}

fn real_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    let mut acc = 0.0;
    for r in 0..a.nrows() {
        for col in 0..a.ncols() {
            let x = a[(r, col)];
            let y = b[(col, r)];
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

/// Incrementally assembled problem.
#[derive(Clone, Debug, Default)]
pub struct SdpBuilder {
    blocks: Vec<usize>,
    objective: SparseOp,
    constraints: Vec<SparseOp>,
    rhs: Vec<f64>,
}

impl SdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// A fresh PSD block.
    pub fn psd(&mut self, dim: usize) -> Slot {
        self.blocks.push(dim);
        Slot {
            block: self.blocks.len() - 1,
            offset: 0,
            dim,
        }
    }

    /// A fresh nonnegative scalar.
    pub fn nonneg(&mut self) -> Slot {
        self.psd(1)
    }

    fn check_slot(&self, slot: Slot, dim: usize) -> Result<(), SdpError> {
        if slot.block >= self.blocks.len() || slot.offset + slot.dim > self.blocks[slot.block] {
            return Err(SdpError::BadSlot);
        }
        if slot.dim != dim {
            return Err(SdpError::DimensionMismatch { slot: slot.dim, op: dim });
        }
        Ok(())
    }

    /// Adds `⟨coef, X_slot⟩` to the objective.
    pub fn minimize(&mut self, slot: Slot, coef: &HermitianOperator) -> Result<(), SdpError> {
        self.check_slot(slot, coef.dim())?;
        self.objective.push_dense(slot, coef.matrix(), 1.0);
        Ok(())
    }

    /// Adds `w · tr X_slot` to the objective.
    pub fn minimize_trace(&mut self, slot: Slot, w: f64) -> Result<(), SdpError> {
        self.minimize(slot, &HermitianOperator::identity(slot.dim).scale(w))
    }

    /// `Σ_k ⟨coef_k, X_{slot_k}⟩ = rhs`; returns the constraint index.
    pub fn scalar_equality(
        &mut self,
        terms: &[(Slot, &HermitianOperator)],
        rhs: f64,
    ) -> Result<usize, SdpError> {
        let mut row = SparseOp::default();
        for (slot, coef) in terms {
            self.check_slot(*slot, coef.dim())?;
            row.push_dense(*slot, coef.matrix(), 1.0);
        }
        self.constraints.push(row);
        self.rhs.push(rhs);
        Ok(self.constraints.len() - 1)
    }

    /// `Σ_k L_k(X_{slot_k}) = rhs` as a Hermitian matrix identity, expanded
    /// into `d²` real scalar constraints over the basis of
    /// [`hermitian_basis`]. Returns the range of constraint indices.
    pub fn matrix_equality(
        &mut self,
        terms: &[(Slot, LinearMap)],
        rhs: &HermitianOperator,
    ) -> Result<Range<usize>, SdpError> {
        let d = rhs.dim();
        for (slot, map) in terms {
            self.check_slot(*slot, slot.dim)?;
            map.check(slot.dim, d)?;
        }
        let start = self.constraints.len();
        for e in hermitian_basis(d) {
            let mut row = SparseOp::default();
            for (slot, map) in terms {
                row.push_dense(*slot, &map.adjoint(&e, slot.dim), 1.0);
            }
            self.constraints.push(row);
            self.rhs.push(real_inner(&e, rhs.matrix()));
        }
        Ok(start..self.constraints.len())
    }

    /// Constrains a whole slot to a fixed operator.
    pub fn fix(&mut self, slot: Slot, value: &HermitianOperator) -> Result<Range<usize>, SdpError> {
        self.matrix_equality(&[(slot, LinearMap::Scaled(1.0))], value)
    }

    pub fn build(self) -> Result<SdpProblem, SdpError> {
        let total: usize = self.blocks.iter().sum();
        if total > MAX_TOTAL_DIM {
            return Err(SdpError::TooLarge(total));
        }
        let mut objective = self.objective;
        objective.canonicalize();
        let mut constraints = self.constraints;
        for row in &mut constraints {
            row.canonicalize();
        }
        Ok(SdpProblem {
            blocks: self.blocks,
            objective,
            constraints,
            rhs: self.rhs,
        })
    }
}

/// min ⟨C, X⟩ s.t. ⟨A_i, X⟩ = b_i, X ⪰ 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SdpProblem {
    blocks: Vec<usize>,
    objective: SparseOp,
    constraints: Vec<SparseOp>,
    rhs: Vec<f64>,
}

impl SdpProblem {
    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().sum()
    }

    /// Scales the objective by `s`.
    pub fn scale_objective(&mut self, s: f64) {
        self.objective.scale(s);
    }

    /// Plain-text dump: block dims, then `block row col re im` triples for
    /// the objective and each constraint (1-based indices).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "blocks {}", self.blocks.len());
        let dims: Vec<String> = self.blocks.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "dims {}", dims.join(" "));
        let _ = writeln!(out, "constraints {}", self.constraints.len());
        let dump = |out: &mut String, op: &SparseOp| {
            for e in &op.entries {
                let _ = writeln!(
                    out,
                    "{} {} {} {:.17e} {:.17e}",
                    e.block + 1,
                    e.row + 1,
                    e.col + 1,
                    e.val.re,
                    e.val.im
                );
            }
        };
        let _ = writeln!(out, "objective {}", self.objective.entries.len());
        dump(&mut out, &self.objective);
        for (i, row) in self.constraints.iter().enumerate() {
            let _ = writeln!(
                out,
                "constraint {} {} {:.17e}",
                i + 1,
                row.entries.len(),
                self.rhs[i]
            );
            dump(&mut out, row);
        }
        out
    }

    fn zeros(&self) -> Vec<CMatrix> {
        self.blocks.iter().map(|&d| CMatrix::zeros(d, d)).collect()
    }

    fn identity(&self, s: f64) -> Vec<CMatrix> {
        self.blocks
            .iter()
            .map(|&d| CMatrix::identity(d, d) * c(s, 0.0))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: DEFAULT_GAP_TOL,
            feas_tol: DEFAULT_FEAS_TOL,
            max_iter: 120,
        }
    }
}

/// Diagnostic ray for infeasible or unbounded problems.
#[derive(Clone, Debug)]
pub enum Ray {
    /// `y` with `Σ y_i A_i ⪯ 0` and `bᵀy > 0` (primal infeasible).
    Dual(Vec<f64>),
    /// `X ⪰ 0` with `A(X) = 0` and `⟨C, X⟩ < 0` (unbounded primal).
    Primal(Vec<CMatrix>),
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<CMatrix>,
    pub y: Vec<f64>,
    pub s: Vec<CMatrix>,
    pub primal_value: f64,
    pub dual_value: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    /// Constraints removed as linearly dependent (their `y` is zero).
    pub dropped: Vec<usize>,
    pub ray: Option<Ray>,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }

    /// Certified duality gap `|primal − dual|`.
    pub fn gap(&self) -> f64 {
        (self.primal_value - self.dual_value).abs()
    }

    fn view(mats: &[CMatrix], slot: Slot) -> HermitianOperator {
        let m = mats[slot.block]
            .view((slot.offset, slot.offset), (slot.dim, slot.dim))
            .into_owned();
        HermitianOperator::symmetrized(m)
    }

    pub fn primal(&self, slot: Slot) -> HermitianOperator {
        Self::view(&self.x, slot)
    }

    pub fn dual_slack(&self, slot: Slot) -> HermitianOperator {
        Self::view(&self.s, slot)
    }

    pub fn scalar(&self, slot: Slot) -> f64 {
        self.x[slot.block][(slot.offset, slot.offset)].re
    }
}

// ---- block helpers ----

fn block_inner(a: &[CMatrix], b: &[CMatrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| real_inner(x, y)).sum()
}

fn hermitize(m: &mut CMatrix) {
    let adj = m.adjoint();
    *m += adj;
    *m *= c(0.5, 0.0);
}

fn max_abs(mats: &[CMatrix]) -> f64 {
    mats.iter()
        .flat_map(|m| m.iter())
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Largest `α ≤ 1/…` with `X + α ΔX ⪰ 0`, given the Cholesky factor of X.
fn max_step(chol: &[Cholesky<C64, nalgebra::Dyn>], dx: &[CMatrix]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (ch, d) in chol.iter().zip(dx) {
        let l = ch.l();
        let w = l
            .solve_lower_triangular(d)
            .expect("Cholesky factor is nonsingular");
        let v = l
            .solve_lower_triangular(&w.adjoint())
            .expect("Cholesky factor is nonsingular");
        let mut m = v.adjoint();
        hermitize(&mut m);
        let min = m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        if min < 0.0 {
            alpha = alpha.min(-1.0 / min);
        }
    }
    alpha
}

fn cholesky_all(mats: &[CMatrix]) -> Option<Vec<Cholesky<C64, nalgebra::Dyn>>> {
    mats.iter().map(|m| Cholesky::new(m.clone())).collect()
}

/// Removes linearly dependent constraints by modified Gram–Schmidt on the
/// real coordinate vectors. Returns (kept indices, dropped indices,
/// inconsistent) where `inconsistent` flags a dependent row whose right-hand
/// side contradicts the others.
fn independent_rows(p: &SdpProblem) -> (Vec<usize>, Vec<usize>, bool) {
    let offsets: Vec<usize> = p
        .blocks
        .iter()
        .scan(0, |acc, &d| {
            let o = *acc;
            *acc += d * d;
            Some(o)
        })
        .collect();
    let n: usize = p.blocks.iter().map(|d| d * d).sum();
    let sqrt2 = std::f64::consts::SQRT_2;
    let to_vec = |row: &SparseOp| {
        let mut v = vec![0.0; n];
        for e in &row.entries {
            let d = p.blocks[e.block];
            let base = offsets[e.block];
            if e.row == e.col {
                v[base + e.row * d + e.row] = e.val.re;
            } else if e.row < e.col {
                v[base + e.row * d + e.col] = sqrt2 * e.val.re;
                v[base + e.col * d + e.row] = sqrt2 * e.val.im;
            }
        }
        v
    };
    let mut basis: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut inconsistent = false;
    for (i, row) in p.constraints.iter().enumerate() {
        let mut v = to_vec(row);
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut b = p.rhs[i];
        for (q, qb) in &basis {
            let proj: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= proj * qi;
            }
            b -= proj * qb;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-10 * norm0.max(1e-300) {
            if b.abs() > 1e-8 * (1.0 + p.rhs[i].abs()) {
                inconsistent = true;
            }
            dropped.push(i);
        } else {
            for vi in &mut v {
                *vi /= norm;
            }
            basis.push((v, b / norm));
            kept.push(i);
        }
    }
    (kept, dropped, inconsistent)
}

/// Solves with default tolerances.
pub fn solve_default(p: &SdpProblem) -> SdpSolution {
    solve(p, SolverOptions::default())
}

pub fn solve(p: &SdpProblem, opts: SolverOptions) -> SdpSolution {
    let (kept, dropped, inconsistent) = independent_rows(p);
    if !dropped.is_empty() {
        log::warn!("dropped {} linearly dependent constraints", dropped.len());
    }
    let full_m = p.constraints.len();
    if inconsistent {
        return SdpSolution {
            status: SdpStatus::Infeasible,
            x: p.zeros(),
            y: vec![0.0; full_m],
            s: p.zeros(),
            primal_value: f64::INFINITY,
            dual_value: f64::INFINITY,
            primal_residual: f64::INFINITY,
            dual_residual: 0.0,
            iterations: 0,
            dropped,
            ray: None,
        };
    }
    // Row scaling: every kept constraint gets unit Frobenius norm.
    let scales: Vec<f64> = kept
        .iter()
        .map(|&i| 1.0 / p.constraints[i].frobenius_sq().sqrt())
        .collect();
    let rows: Vec<SparseOp> = kept
        .iter()
        .zip(&scales)
        .map(|(&i, &s)| {
            let mut r = p.constraints[i].clone();
            r.scale(s);
            r
        })
        .collect();
    let b: Vec<f64> = kept.iter().zip(&scales).map(|(&i, &s)| p.rhs[i] * s).collect();
    let mut ipm = Ipm::new(p, &rows, &b);
    let (status, iterations, ray) = ipm.run(opts);

    let mut y = vec![0.0; full_m];
    for (k, &i) in kept.iter().enumerate() {
        y[i] = ipm.y[k] * scales[k];
    }
    let ray = ray.map(|r| match r {
        Ray::Dual(yr) => {
            let mut full = vec![0.0; full_m];
            for (k, &i) in kept.iter().enumerate() {
                full[i] = yr[k] * scales[k];
            }
            Ray::Dual(full)
        }
        other => other,
    });
    let primal_value = p.objective.inner(&ipm.x);
    let dual_value: f64 = y.iter().zip(&p.rhs).map(|(a, b)| a * b).sum();
    let primal_residual = p
        .constraints
        .iter()
        .zip(&p.rhs)
        .map(|(a, bi)| (a.inner(&ipm.x) - bi).abs())
        .fold(0.0, f64::max);
    let mut rd = p.zeros();
    p.objective.add_to(&mut rd, 1.0);
    for (a, yi) in p.constraints.iter().zip(&y) {
        a.add_to(&mut rd, -yi);
    }
    for (r, s) in rd.iter_mut().zip(&ipm.s) {
        *r -= s;
    }
    SdpSolution {
        status,
        x: ipm.x,
        y,
        s: ipm.s,
        primal_value,
        dual_value,
        primal_residual,
        dual_residual: max_abs(&rd),
        iterations,
        dropped,
        ray,
    }
}

/// Saved iterate: score, iteration, X, y, S.
type Snapshot = (f64, usize, Vec<CMatrix>, Vec<f64>, Vec<CMatrix>);

struct Ipm<'a> {
    p: &'a SdpProblem,
    rows: &'a [SparseOp],
    b: &'a [f64],
    /// Per block: (constraint index, entries in that block).
    by_block: Vec<Vec<(usize, Vec<Entry>)>>,
    x: Vec<CMatrix>,
    y: Vec<f64>,
    s: Vec<CMatrix>,
}

impl<'a> Ipm<'a> {
    fn new(p: &'a SdpProblem, rows: &'a [SparseOp], b: &'a [f64]) -> Self {
        let mut by_block: Vec<Vec<(usize, Vec<Entry>)>> = vec![Vec::new(); p.blocks.len()];
        for (i, row) in rows.iter().enumerate() {
            for blk in 0..p.blocks.len() {
                let es: Vec<Entry> = row.entries.iter().copied().filter(|e| e.block == blk).collect();
                if !es.is_empty() {
                    by_block[blk].push((i, es));
                }
            }
        }
        let n = p.total_dim().max(1) as f64;
        let bmax = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let cnorm = p.objective.frobenius_sq().sqrt();
        let xi = (10.0f64).max(n.sqrt()).max(n * (1.0 + bmax));
        let eta = (10.0f64).max(n.sqrt()).max(1.0 + cnorm);
        Self {
            p,
            rows,
            b,
            by_block,
            x: p.identity(xi),
            y: vec![0.0; rows.len()],
            s: p.identity(eta),
        }
    }

    fn apply_a(&self, w: &[CMatrix]) -> Vec<f64> {
        self.rows.iter().map(|r| r.inner(w)).collect()
    }

    fn apply_at(&self, y: &[f64]) -> Vec<CMatrix> {
        let mut out = self.p.zeros();
        for (r, &yi) in self.rows.iter().zip(y) {
            r.add_to(&mut out, yi);
        }
        out
    }

    fn schur(&self, z: &[CMatrix]) -> DMatrix<f64> {
        let m = self.rows.len();
        let mut mat = DMatrix::<f64>::zeros(m, m);
        for (blk, list) in self.by_block.iter().enumerate() {
            let x = &self.x[blk];
            let zb = &z[blk];
            let d = x.nrows();
            for (j, ej) in list {
                // G = X A_j Z
                let mut xa = CMatrix::zeros(d, d);
                for e in ej {
                    for r in 0..d {
                        xa[(r, e.col)] += x[(r, e.row)] * e.val;
                    }
                }
                let g = xa * zb;
                for (i, ei) in list {
                    let mut acc = 0.0;
                    for e in ei {
                        let gz = g[(e.col, e.row)];
                        acc += e.val.re * gz.re - e.val.im * gz.im;
                    }
                    mat[(*i, *j)] += acc;
                }
            }
        }
        let t = mat.transpose();
        (mat + t) * 0.5
    }

    fn solve_schur(m: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
        let r = DVector::from_column_slice(rhs);
        if let Some(ch) = m.clone().cholesky() {
            let sol = ch.solve(&r);
            if sol.iter().all(|v| v.is_finite()) {
                return Some(sol.iter().copied().collect());
            }
        }
        // Tikhonov fallback for a numerically singular Schur complement.
        let diag_max = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
        let mut reg = m.clone();
        for i in 0..m.nrows() {
            reg[(i, i)] += 1e-14 * diag_max.max(1e-300);
        }
        if let Some(ch) = reg.cholesky() {
            let sol = ch.solve(&r);
            if sol.iter().all(|v| v.is_finite()) {
                return Some(sol.iter().copied().collect());
            }
        }
        m.clone()
            .lu()
            .solve(&r)
            .map(|s| s.iter().copied().collect())
    }

    fn residuals(&self) -> (Vec<f64>, Vec<CMatrix>) {
        let ax = self.apply_a(&self.x);
        let rp: Vec<f64> = self.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut rd = self.p.zeros();
        self.p.objective.add_to(&mut rd, 1.0);
        let aty = self.apply_at(&self.y);
        for ((r, a), s) in rd.iter_mut().zip(&aty).zip(&self.s) {
            *r -= a;
            *r -= s;
        }
        (rp, rd)
    }

    /// Direction for given centering target and second-order correction.
    fn direction(
        &self,
        mschur: &DMatrix<f64>,
        z: &[CMatrix],
        rd: &[CMatrix],
        sigma_mu: f64,
        corr: Option<(&[CMatrix], &[CMatrix])>,
    ) -> Option<(Vec<CMatrix>, Vec<f64>, Vec<CMatrix>)> {
        let nb = self.x.len();
        // H = X Rd Z − σμ Z + ΔXa ΔSa Z
        let mut h: Vec<CMatrix> = (0..nb)
            .map(|k| &self.x[k] * &rd[k] * &z[k] - &z[k] * c(sigma_mu, 0.0))
            .collect();
        if let Some((dxa, dsa)) = corr {
            for k in 0..nb {
                h[k] += &dxa[k] * &dsa[k] * &z[k];
            }
        }
        let ah = self.apply_a(&h);
        let rhs: Vec<f64> = self.b.iter().zip(&ah).map(|(b, a)| b + a).collect();
        let dy = Self::solve_schur(mschur, &rhs)?;
        let atdy = self.apply_at(&dy);
        let ds: Vec<CMatrix> = rd.iter().zip(&atdy).map(|(r, a)| r - a).collect();
        let mut dx: Vec<CMatrix> = Vec::with_capacity(nb);
        for k in 0..nb {
            let mut d = &z[k] * c(sigma_mu, 0.0) - &self.x[k] - &self.x[k] * &ds[k] * &z[k];
            if let Some((dxa, dsa)) = corr {
                d -= &dxa[k] * &dsa[k] * &z[k];
            }
            hermitize(&mut d);
            dx.push(d);
        }
        Some((dx, dy, ds))
    }

    fn run(&mut self, opts: SolverOptions) -> (SdpStatus, usize, Option<Ray>) {
        let n = self.p.total_dim().max(1) as f64;
        let bnorm = self.b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let cnorm = self
            .p
            .objective
            .entries
            .iter()
            .fold(0.0f64, |m, e| m.max(e.val.norm()));
        let mut stalls = 0;
        // Best iterate so far by the worst of relative gap and infeasibilities.
        let mut best: Option<Snapshot> = None;
        for iter in 0..opts.max_iter {
            let (rp, rd) = self.residuals();
            let pobj = self.p.objective.inner(&self.x);
            let dobj: f64 = self.b.iter().zip(&self.y).map(|(b, y)| b * y).sum();
            let pinf = rp.iter().fold(0.0f64, |m, x| m.max(x.abs())) / (1.0 + bnorm);
            let dinf = max_abs(&rd) / (1.0 + cnorm);
            let gap_ok = (pobj - dobj).abs() <= opts.gap_tol * pobj.abs().max(1.0);
            if gap_ok && pinf <= opts.feas_tol && dinf <= opts.feas_tol {
                return (SdpStatus::Optimal, iter, None);
            }
            let merit = ((pobj - dobj).abs() / pobj.abs().max(1.0)).max(pinf).max(dinf);
            match &best {
                Some((m, at, ..)) if merit >= *m => {
                    if iter - at > STAGNATION_ITERS {
                        return self.restore_best(best, iter);
                    }
                }
                _ => best = Some((merit, iter, self.x.clone(), self.y.clone(), self.s.clone())),
            }
            let xnorm = max_abs(&self.x);
            let ynorm = self.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dobj > 1e9 * (1.0 + pobj.abs().min(1e9)) && dinf < 1e-6 && ynorm > 1e9 {
                let yr = self.y.iter().map(|v| v / ynorm).collect();
                return (SdpStatus::Infeasible, iter, Some(Ray::Dual(yr)));
            }
            if pobj < -1e9 && pinf < 1e-6 && xnorm > 1e9 {
                let xr = self.x.iter().map(|m| m / c(xnorm, 0.0)).collect();
                return (SdpStatus::Unbounded, iter, Some(Ray::Primal(xr)));
            }

            let Some(xchol) = cholesky_all(&self.x) else {
                return self.restore_best(best, iter);
            };
            let Some(schol) = cholesky_all(&self.s) else {
                return self.restore_best(best, iter);
            };
            let z: Vec<CMatrix> = schol
                .iter()
                .map(|ch| {
                    let mut inv = ch.inverse();
                    hermitize(&mut inv);
                    inv
                })
                .collect();
            let mu = block_inner(&self.x, &self.s) / n;
            let mschur = self.schur(&z);

            let Some((dxa, _dya, dsa)) = self.direction(&mschur, &z, &rd, 0.0, None) else {
                return self.restore_best(best, iter);
            };
            let ap = max_step(&xchol, &dxa).min(1.0);
            let ad = max_step(&schol, &dsa).min(1.0);
            let xa: Vec<CMatrix> = self.x.iter().zip(&dxa).map(|(x, d)| x + d * c(ap, 0.0)).collect();
            let sa: Vec<CMatrix> = self.s.iter().zip(&dsa).map(|(s, d)| s + d * c(ad, 0.0)).collect();
            let mu_aff = block_inner(&xa, &sa) / n;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            let Some((dx, dy, ds)) =
                self.direction(&mschur, &z, &rd, sigma * mu, Some((&dxa, &dsa)))
            else {
                return self.restore_best(best, iter);
            };
            let gamma = 0.9 + 0.08 * ap.min(ad);
            let ap = (gamma * max_step(&xchol, &dx)).min(1.0);
            let ad = (gamma * max_step(&schol, &ds)).min(1.0);
            if ap.max(ad) < 1e-10 {
                stalls += 1;
                if stalls > 3 {
                    return self.restore_best(best, iter);
                }
            } else {
                stalls = 0;
            }
            for k in 0..self.x.len() {
                self.x[k] += &dx[k] * c(ap, 0.0);
                hermitize(&mut self.x[k]);
                self.s[k] += &ds[k] * c(ad, 0.0);
                hermitize(&mut self.s[k]);
            }
            for (yi, d) in self.y.iter_mut().zip(&dy) {
                *yi += ad * d;
            }
        }
        self.restore_best(best, opts.max_iter)
    }

    fn restore_best(
        &mut self,
        best: Option<Snapshot>,
        iter: usize,
    ) -> (SdpStatus, usize, Option<Ray>) {
        if let Some((_, _, x, y, s)) = best {
            self.x = x;
            self.y = y;
            self.s = s;
        }
        (SdpStatus::MaxIterations, iter, None)
    }
}

/// Handle returned by [`fidelity_block`].
#[derive(Clone, Copy, Debug)]
pub struct FidelityBlock {
    /// The smoothed state ρ̃ (lower-right sub-slot of the fidelity block).
    pub state: Slot,
    /// Whole block `[[1_r, K†], [K, ρ̃]]`.
    pub block: Slot,
    pub slack: Slot,
    /// Index of the scalar constraint `Re tr(V†K) − s = f`.
    pub constraint: usize,
}

/// Allocates a state variable ρ̃ together with the constraint
/// `‖√ρ̃ √ρ‖₁ ≥ f_target`.
///
/// With `ρ = V V†` (V of size d×r), `‖√ρ̃ V‖₁ = max Re tr(V†K)` over
/// `[[1_r, K†], [K, ρ̃]] ⪰ 0`, so the constraint is linear in the block.
/// `ρ` must be normalized.
pub fn fidelity_block(
    builder: &mut SdpBuilder,
    rho: &HermitianOperator,
    f_target: f64,
) -> Result<FidelityBlock, SdpError> {
    if !(0.0..=1.0).contains(&f_target) {
        return Err(SdpError::BadFidelityTarget(f_target));
    }
    let tr = rho.trace();
    if (tr - 1.0).abs() > 1e-10 {
        return Err(SdpError::SubnormalizedReference(tr));
    }
    let es = rho.eig();
    let tol = es.support_threshold();
    let support: Vec<usize> = (0..es.dim()).filter(|&k| es.eigenvalues[k] > tol).collect();
    let d = rho.dim();
    let mut v = CMatrix::zeros(d, support.len());
    for (col, &k) in support.iter().enumerate() {
        let w = es.eigenvalues[k].sqrt();
        for i in 0..d {
            v[(i, col)] = es.eigenvectors[(i, k)] * w;
        }
    }
    fidelity_block_factor(builder, &v, f_target)
}

/// As [`fidelity_block`] with the reference given by a factor `V`
/// (`ρ = V V†`, V of size d×r). No normalization check.
pub fn fidelity_block_factor(
    builder: &mut SdpBuilder,
    v: &CMatrix,
    f_target: f64,
) -> Result<FidelityBlock, SdpError> {
    if !(0.0..=1.0).contains(&f_target) {
        return Err(SdpError::BadFidelityTarget(f_target));
    }
    let (d, r) = (v.nrows(), v.ncols());
    let block = builder.psd(r + d);
    let state = block.sub(r, d);
    builder.fix(block.sub(0, r), &HermitianOperator::identity(r))?;
    let mut h = CMatrix::zeros(r + d, r + d);
    h.view_mut((r, 0), (d, r)).copy_from(&(v * c(0.5, 0.0)));
    h.view_mut((0, r), (r, d)).copy_from(&(v.adjoint() * c(0.5, 0.0)));
    let h = HermitianOperator::symmetrized(h);
    let slack = builder.nonneg();
    let minus_one = HermitianOperator::from_real_diagonal(&[-1.0]);
    let constraint = builder.scalar_equality(&[(block, &h), (slack, &minus_one)], f_target)?;
    Ok(FidelityBlock {
        state,
        block,
        slack,
        constraint,
    })
}
