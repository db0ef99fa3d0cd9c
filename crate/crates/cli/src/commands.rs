use crate::error::{CliError, Result};
use crate::scenario::{Quantity, Scenario};
use fblq_core::blocklength::{bounds_curve, exact_curve, figure1_curves, log_spaced, BoundCurve, Task, XiGrid};
use fblq_core::divergences::{conditional_moments, quantum_moments};
use fblq_core::format::sig12;
use fblq_core::hierarchy::{default_suite, run_suite, write_csv};
use fblq_core::linalg::HermitianOperator;
use fblq_core::one_shot::{dh_cross_checked, dmax_smooth, hh_optimized, hmin_smooth, Method, OneShotResult, Witness};
use fblq_core::par::Execution;
use fblq_core::states::{spectral_stats, support_lambda, DensityOperator, SpectralStats, CLUSTER_TOL};
use fblq_core::tasks::{
    brute_force_m, compression_bounds, direct_compression, direct_extraction, extraction_bounds,
    perr_monte_carlo, MAX_BRUTE_DIM_B, MAX_BRUTE_SYMBOLS,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

/// Eigenvalues above this count towards a witness's rank.
const RANK_TOL: f64 = 1e-9;

pub const FIGURE1_P: f64 = 0.05;
pub const FIGURE1_EPS: f64 = 1e-6;
pub const FIGURE1_N: (u64, u64) = (10_000, 100_000_000);
pub const DEFAULT_POINTS: usize = 40;

/// What a command produced: the document for stdout (or `--out`), a line
/// for stderr, and a failure to report after the output is written.
pub struct Output {
    pub text: String,
    pub summary: Option<String>,
    pub failure: Option<CliError>,
}

impl Output {
    fn json(v: Value) -> Self {
        Self {
            text: serde_json::to_string_pretty(&v).expect("json values serialize") + "\n",
            summary: None,
            failure: None,
        }
    }
}

/// Bits rounded to 12 significant digits; non-finite values as strings.
fn num(x: f64) -> Value {
    let s = sig12(x);
    match s.parse::<f64>().ok().and_then(serde_json::Number::from_f64) {
        Some(n) if x.is_finite() => Value::Number(n),
        _ => Value::String(s),
    }
}

fn stats(s: SpectralStats) -> Value {
    json!({ "nu": s.nu, "lambda": num(s.lambda), "theta": s.theta })
}

fn op_summary(op: &HermitianOperator) -> Value {
    let ev = op.eigenvalues();
    json!({
        "dim": op.dim(),
        "trace": num(op.trace()),
        "rank": ev.iter().filter(|&&x| x > RANK_TOL).count(),
        "min_eigenvalue": num(op.min_eigenvalue()),
        "max_eigenvalue": num(op.max_eigenvalue()),
    })
}

fn epsilon(s: &Scenario) -> Result<f64> {
    s.params
        .epsilon
        .ok_or_else(|| CliError::usage("epsilon is required (--epsilon or params.epsilon)"))
}

fn grid(s: &Scenario) -> XiGrid {
    s.params.grid.unwrap_or_default()
}

pub fn entropy(s: &Scenario) -> Result<Output> {
    let mut report = Map::new();
    if let Some(src) = &s.source {
        let m = src.model()?;
        let rho_b = m.cq.marginal_b();
        let reference = HermitianOperator::identity(m.cq.num_symbols()).kron(&rho_b);
        report.insert(
            "source".into(),
            json!({
                "num_symbols": m.cq.num_symbols(),
                "dim_b": m.cq.dim_b(),
                "h_x_given_b": num(m.h),
                "v_x_given_b": num(m.v),
                "t_x_given_b": num(m.t),
                "d": num(-m.h),
                "v": num(m.v),
                "t": num(m.t),
                "lambda_b": num(support_lambda(&rho_b)),
                "reference": stats(spectral_stats(&reference, CLUSTER_TOL)),
            }),
        );
    }
    if let Some(pair) = &s.pair {
        let (rho, sigma) = (pair.rho()?, pair.sigma()?);
        let m = quantum_moments(&rho, &sigma)?;
        let mut obj = json!({
            "d": num(m.d),
            "v": num(m.v),
            "t": num(m.t),
            "reference": stats(spectral_stats(&sigma, CLUSTER_TOL)),
        });
        if let Some(dims) = pair.dims {
            let cm = conditional_moments(&rho, dims)?;
            obj["conditional"] = json!({ "h": num(cm.h), "v": num(cm.v), "t": num(cm.t) });
        }
        report.insert("pair".into(), obj);
    }
    if report.is_empty() {
        return Err(CliError::usage("entropy needs a [source] or [pair] table"));
    }
    Ok(Output::json(Value::Object(report)))
}

/// `(ρ, σ)` from `[pair]`, else `(ρ_XB, 1_X ⊗ ρ_B)` from `[source]`.
fn divergence_inputs(s: &Scenario) -> Result<(DensityOperator, HermitianOperator)> {
    if let Some(pair) = &s.pair {
        return Ok((pair.rho()?, pair.sigma()?));
    }
    let cq = s.source()?.cq()?;
    let reference = HermitianOperator::identity(cq.num_symbols()).kron(&cq.marginal_b());
    Ok((cq.to_density()?, reference))
}

fn bipartite_inputs(s: &Scenario) -> Result<(DensityOperator, [usize; 2])> {
    if let Some(pair) = &s.pair {
        let dims = pair
            .dims
            .ok_or_else(|| CliError::usage("pair.dims is required for conditional quantities"))?;
        return Ok((pair.rho()?, dims));
    }
    let cq = s.source()?.cq()?;
    Ok((cq.to_density()?, [cq.num_symbols(), cq.dim_b()]))
}

fn witness(w: &Witness, eps: f64, rho: &DensityOperator, dim_a: usize) -> Value {
    match w {
        Witness::Test(q) => json!({ "kind": "test", "test": op_summary(q) }),
        Witness::Optimized { q, dual } => json!({
            "kind": "optimized",
            "test": op_summary(q),
            "dual_value": num(dual.value(eps)),
            "dual_eta": num(dual.eta),
            "dual_violation": num(dual.violation(rho.op(), dim_a)),
        }),
        Witness::Smoothed { state, sigma_b } => json!({
            "kind": "smoothed",
            "state": op_summary(state),
            "sigma_b": sigma_b.as_ref().map(op_summary),
        }),
        Witness::None => json!({ "kind": "none" }),
    }
}

pub fn oneshot(s: &Scenario) -> Result<Output> {
    let q = s
        .params
        .quantity
        .ok_or_else(|| CliError::usage("quantity is required (--quantity or params.quantity)"))?;
    let eps = epsilon(s)?;
    let (res, w): (OneShotResult, Value) = match q {
        Quantity::Dh | Quantity::Dmax => {
            let (rho, sigma) = divergence_inputs(s)?;
            let r = if q == Quantity::Dh {
                dh_cross_checked(&rho, &sigma, eps)?
            } else {
                dmax_smooth(&rho, &sigma, eps)?
            };
            let w = witness(&r.witness, eps, &rho, 1);
            (r, w)
        }
        Quantity::Hmin | Quantity::Hh => {
            let (rho, dims) = bipartite_inputs(s)?;
            let r = if q == Quantity::Hmin {
                hmin_smooth(&rho, dims, eps)?
            } else {
                hh_optimized(&rho, dims, eps)?
            };
            let w = witness(&r.witness, eps, &rho, dims[0]);
            (r, w)
        }
    };
    let method = match (q, res.method) {
        (Quantity::Dh, _) => "sdp+neyman-pearson",
        (_, Method::Sdp) => "sdp",
        (_, Method::NeymanPearson) => "neyman-pearson",
    };
    Ok(Output::json(json!({
        "quantity": q,
        "epsilon": num(eps),
        "value": num(res.value),
        "gap": num(res.gap),
        "method": method,
        "witness": w,
    })))
}

pub fn hierarchy(s: &Scenario, exec: Execution) -> Result<Output> {
    let entries = match &s.suite {
        Some(suite) => suite.entries()?,
        None => default_suite(),
    };
    let reports = run_suite(&entries, exec)?;
    let mut buf = Vec::new();
    write_csv(&reports, &mut buf)?;
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} ({} seed {}, slack {})", r.name, r.kind, r.seed, sig12(r.slack)))
        .collect();
    let min_slack = reports.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    Ok(Output {
        text: String::from_utf8(buf).expect("csv output is utf-8"),
        summary: Some(format!(
            "{} instances, {} inequalities, {} failed, min slack {}",
            entries.len(),
            reports.len(),
            failed.len(),
            sig12(min_slack)
        )),
        failure: (!failed.is_empty()).then(|| CliError::Verification(failed.join("; "))),
    })
}

fn n_list(s: &Scenario, default: Option<(u64, u64)>) -> Result<Vec<u64>> {
    let p = &s.params;
    if let Some(n) = p.n {
        return Ok(vec![n]);
    }
    let (lo, hi) = match (p.n_min, p.n_max, default) {
        (Some(lo), Some(hi), _) => (lo, hi),
        (None, None, Some(d)) => d,
        _ => return Err(CliError::usage("give n, or both n-min and n-max")),
    };
    if lo == 0 || lo > hi {
        return Err(CliError::usage(format!("n range [{lo}, {hi}] must satisfy 1 <= n-min <= n-max")));
    }
    Ok(log_spaced(lo, hi, p.n_points.unwrap_or(DEFAULT_POINTS)))
}

fn curve_output(curve: BoundCurve) -> Result<Output> {
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    let flagged = curve.points.iter().filter(|p| p.flags() != "none").count();
    Ok(Output {
        text: String::from_utf8(buf).expect("csv output is utf-8"),
        summary: Some(format!(
            "{} {} points at eps = {}, {} flagged",
            curve.points.len(),
            curve.task,
            sig12(curve.eps),
            flagged
        )),
        failure: None,
    })
}

pub fn bounds(s: &Scenario, figure1: bool, exec: Execution) -> Result<Output> {
    if figure1 {
        let eps = s.params.epsilon.unwrap_or(FIGURE1_EPS);
        let ns = n_list(s, Some(FIGURE1_N))?;
        return curve_output(figure1_curves(FIGURE1_P, eps, &ns, grid(s), exec)?);
    }
    let eps = epsilon(s)?;
    let ns = n_list(s, None)?;
    let src = s.source()?.model()?;
    let task = s.params.task.unwrap_or(Task::Extraction);
    let curve = if s.params.exact.unwrap_or(false) {
        if task != Task::Extraction {
            return Err(CliError::usage("exact bounds are available for extraction only"));
        }
        exact_curve(&src, eps, &ns, grid(s), exec)?
    } else {
        bounds_curve(&src, task, eps, &ns, grid(s), exec)?
    };
    curve_output(curve)
}

pub fn simulate(s: &Scenario) -> Result<Output> {
    let eps = epsilon(s)?;
    let eta = s.params.eta.unwrap_or(eps / 2.0);
    let cq = s.source()?.cq()?;
    let task = s.params.task.unwrap_or(Task::Extraction);
    let (report, verified) = match task {
        Task::Extraction => {
            let out = direct_extraction(&cq, eps, eta)?;
            let (lo, hi) = extraction_bounds(&cq, eps, eta)?;
            let report = json!({
                "task": task,
                "epsilon": num(eps),
                "eta": num(eta),
                "length": out.length,
                "hmin_smooth": num(out.hmin),
                "seeds": out.protocol.family.seeds().len(),
                "dsec": num(out.dsec.value),
                "dsec_lower": num(out.dsec.lower),
                "bounds": { "lower": num(lo), "upper": num(hi) },
                "verified": out.verified,
            });
            (report, out.verified)
        }
        Task::Compression => {
            let out = direct_compression(&cq, eps, eta)?;
            let (lo, hi) = compression_bounds(&cq, eps, eta)?;
            let mut report = json!({
                "task": task,
                "epsilon": num(eps),
                "eta": num(eta),
                "length": out.length,
                "codebook_bits": num(out.protocol.codebook_bits()),
                "hh": num(out.hh),
                "perr": num(out.perr),
                "bounds": { "lower": num(lo), "upper": num(hi) },
                "verified": out.verified,
            });
            if cq.num_symbols() <= MAX_BRUTE_SYMBOLS && cq.dim_b() <= MAX_BRUTE_DIM_B {
                report["brute_force_m"] = json!(brute_force_m(&cq, eps)?);
            }
            if let Some(samples) = s.params.samples.filter(|&k| k > 0) {
                let seed = s.params.seed.unwrap_or(0);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (est, se) = perr_monte_carlo(&cq, &out.protocol, samples, &mut rng)?;
                report["monte_carlo"] = json!({
                    "samples": samples,
                    "seed": seed,
                    "estimate": num(est),
                    "stderr": num(se),
                });
            }
            (report, out.verified)
        }
    };
    let mut output = Output::json(report);
    if !verified {
        output.failure = Some(CliError::Verification(format!(
            "achieved {task} error exceeds epsilon = {}",
            sig12(eps)
        )));
    }
    Ok(output)
}
