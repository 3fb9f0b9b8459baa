//! Implicit L1 time stepping for `-∂_t^α u + a^{ij}D_{ij}u + b^iD_iu + cu = f`
//! on a periodic box with `u(0,·) = 0`, plus the zero extension, energy and
//! local-estimate checks.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::fraccore::{self, gamma_fn, FracOrder, KernelWeights, SoeHistory, TimeSeries};
use crate::grids::{lp_of_nodes, GridFunction, NormDomain, SpaceGrid, TimeGrid};
use crate::linalg::{bicgstab, solve_cyclic_tridiagonal, symmetric_eigenvalues, CsrMatrix};

/// How the L1 history sum is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HistoryMode {
    Dense,
    /// Sum-of-exponentials kernel with relative accuracy `eps`.
    Compressed { eps: f64 },
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub alpha: FracOrder,
    pub coeffs: CoefficientField,
    pub rhs: GridFunction,
    /// Relative tolerance of the per-step linear solves.
    pub tol: f64,
    pub history: HistoryMode,
}

impl SolveConfig {
    pub fn new(alpha: FracOrder, coeffs: CoefficientField, rhs: GridFunction) -> Self {
        SolveConfig { alpha, coeffs, rhs, tol: 1e-10, history: HistoryMode::Dense }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u: GridFunction,
    /// Relative residual of the linear system at each step `1..=n`.
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    pub wall_time: Duration,
    pub history: HistoryMode,
    /// Share of `∫|u|` in the outer shell of the box (distance ≥ L/4 from the
    /// center); large values signal periodic wrap-around.
    pub support_ratio: f64,
}

fn check_ellipticity(a: &[f64], d: usize, delta: f64, where_: &str) -> Result<()> {
    let lam = symmetric_eigenvalues(a, d)[0];
    if lam < delta - 1e-12 {
        return Err(Error::Ellipticity(format!("minimum eigenvalue {lam} < δ = {delta} {where_}")));
    }
    Ok(())
}

/// Sparse matrix of `a^{ij}D_{ij} + b^iD_i + c` at time node `k`, with the
/// same central stencils as [`crate::grids::finite_diff`].
pub fn assemble_operator(coeffs: &CoefficientField, k: usize) -> Result<CsrMatrix> {
    let sp = coeffs.space();
    if k > coeffs.time().n {
        return Err(Error::Argument(format!("time node {k} is outside the coefficient grid")));
    }
    let d = sp.dim();
    let m = sp.num_nodes();
    let dx = sp.spacing();
    let inv2 = 1.0 / (dx * dx);
    if coeffs.time_only {
        check_ellipticity(coeffs.a_at(k, 0), d, coeffs.delta, &format!("at time node {k}"))?;
    }
    let rows: Vec<Result<Vec<(usize, f64)>>> = (0..m)
        .into_par_iter()
        .map(|s| {
            let a = coeffs.a_at(k, s);
            if !coeffs.time_only {
                check_ellipticity(a, d, coeffs.delta, &format!("at node ({k}, {s})"))?;
            }
            let b = coeffs.b_at(k, s);
            let mut row = vec![(s, coeffs.c_at(k, s))];
            for i in 0..d {
                let p = sp.shift(s, i, 1);
                let q = sp.shift(s, i, -1);
                row.push((p, a[i * d + i] * inv2 + b[i] / (2.0 * dx)));
                row.push((q, a[i * d + i] * inv2 - b[i] / (2.0 * dx)));
                row.push((s, -2.0 * a[i * d + i] * inv2));
                for j in (i + 1)..d {
                    // a^{ij} D_{ij} + a^{ji} D_{ji}
                    let w = (a[i * d + j] + a[j * d + i]) * 0.25 * inv2;
                    row.push((sp.shift(p, j, 1), w));
                    row.push((sp.shift(p, j, -1), -w));
                    row.push((sp.shift(q, j, 1), -w));
                    row.push((sp.shift(q, j, -1), w));
                }
            }
            Ok(row)
        })
        .collect();
    Ok(CsrMatrix::from_rows(rows.into_iter().collect::<Result<_>>()?))
}

fn same_coefficients(coeffs: &CoefficientField, k1: usize, k2: usize) -> bool {
    coeffs.a.time_slice(k1) == coeffs.a.time_slice(k2)
        && coeffs.b.time_slice(k1) == coeffs.b.time_slice(k2)
        && coeffs.c.time_slice(k1) == coeffs.c.time_slice(k2)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `(c0 I - A) x = rhs` directly (`d = 1`) or by BiCGSTAB.
fn step_solve(op: &CsrMatrix, c0: f64, rhs: &[f64], guess: &[f64], d: usize, tol: f64, step: usize) -> Result<(Vec<f64>, f64, usize)> {
    let sys = op.shifted(c0, -1.0);
    let bn = norm2(rhs);
    if bn == 0.0 {
        return Ok((vec![0.0; rhs.len()], 0.0, 0));
    }
    let (x, iters) = if d == 1 {
        let m = sys.n;
        let lower: Vec<f64> = (0..m).map(|i| sys.get(i, (i + m - 1) % m)).collect();
        let diag: Vec<f64> = (0..m).map(|i| sys.get(i, i)).collect();
        let upper: Vec<f64> = (0..m).map(|i| sys.get(i, (i + 1) % m)).collect();
        let x = solve_cyclic_tridiagonal(&lower, &diag, &upper, rhs).map_err(|e| match e {
            Error::Solver { message, trace, .. } => Error::Solver { step, message, trace },
            other => other,
        })?;
        (x, 1)
    } else {
        let sol = bicgstab(&sys, rhs, Some(guess), tol, 5000).map_err(|e| match e {
            Error::Solver { message, trace, .. } => Error::Solver { step, message, trace },
            other => other,
        })?;
        (sol.x, sol.iterations)
    };
    let r = sys.matvec(&x);
    let res = norm2(&r.iter().zip(rhs).map(|(a, b)| a - b).collect::<Vec<_>>()) / bn;
    if !(res <= tol) {
        return Err(Error::Solver { step, message: format!("relative residual {res:.3e} exceeds tolerance {tol:.1e}"), trace: vec![res] });
    }
    Ok((x, res, iters))
}

/// Implicit L1 stepping: at step `n` solves `(c0 I - A^n) u^n = c0 H^n - f^n`.
pub fn solve(cfg: &SolveConfig) -> Result<SolveReport> {
    let start = Instant::now();
    let time = cfg.rhs.time;
    let sp = cfg.rhs.space;
    if cfg.coeffs.time() != time || cfg.coeffs.space() != sp {
        return Err(Error::Argument("coefficients and right-hand side live on different lattices".into()));
    }
    if cfg.rhs.components != 1 {
        return Err(Error::Argument("right-hand side must be scalar".into()));
    }
    cfg.coeffs.validate()?;
    let m = sp.num_nodes();
    let n = time.n;
    let h = time.h;
    let kw = KernelWeights::new(cfg.alpha, h, n)?;
    let c0 = kw.l1_scale;
    let b = &kw.l1_weights;
    let mut u = GridFunction::zeros(time, sp, 1);
    let mut residuals = Vec::with_capacity(n);
    let mut iterations = Vec::with_capacity(n);
    let mut soe = match cfg.history {
        HistoryMode::Dense => None,
        HistoryMode::Compressed { eps } => {
            let kernel = fraccore::soe_history(cfg.alpha, eps, (h, time.t_end() - time.t0))?;
            Some(SoeHistory::new(kernel, cfg.alpha, h, m, &vec![0.0; m]))
        }
    };
    let mut op: Option<CsrMatrix> = None;
    for step in 1..=n {
        if op.is_none() || !same_coefficients(&cfg.coeffs, step, step - 1) {
            op = Some(assemble_operator(&cfg.coeffs, step)?);
        }
        let prev = u.time_slice(step - 1).to_vec();
        // c0 H^n
        let mut hist: Vec<f64> = prev.iter().map(|v| c0 * v).collect();
        match &soe {
            None => {
                let vals = u.values();
                hist.par_iter_mut().enumerate().for_each(|(s, hs)| {
                    let mut acc = 0.0;
                    for k in 0..step.saturating_sub(1) {
                        acc += b[step - 1 - k] * (vals[(k + 1) * m + s] - vals[k * m + s]);
                    }
                    *hs -= c0 * acc;
                });
            }
            Some(hst) => {
                for (hs, p) in hist.iter_mut().zip(hst.history()) {
                    *hs -= p;
                }
            }
        }
        let f = cfg.rhs.time_slice(step);
        let rhs: Vec<f64> = hist.iter().zip(f).map(|(hs, f)| hs - f).collect();
        let (x, res, it) = step_solve(op.as_ref().unwrap(), c0, &rhs, &prev, sp.dim(), cfg.tol, step)?;
        u.time_slice_mut(step).copy_from_slice(&x);
        if let Some(hst) = soe.as_mut() {
            hst.push(&x);
        }
        residuals.push(res);
        iterations.push(it);
    }
    let support_ratio = support_ratio(&u);
    Ok(SolveReport { u, residuals, iterations, wall_time: start.elapsed(), history: cfg.history, support_ratio })
}

fn support_ratio(u: &GridFunction) -> f64 {
    let sp = u.space;
    let center = vec![0.5 * sp.box_length(); sp.dim()];
    let m = sp.num_nodes();
    let outer: Vec<bool> = (0..m).map(|s| sp.periodic_distance(&sp.coords(s), &center) >= 0.25 * sp.box_length()).collect();
    let (mut tot, mut out) = (0.0, 0.0);
    for (i, v) in u.values().iter().enumerate() {
        tot += v.abs();
        if outer[i % m] {
            out += v.abs();
        }
    }
    if tot == 0.0 {
        0.0
    } else {
        out / tot
    }
}

/// `-∂_t^α u + A u - f` at every node (node 0 is zero).
pub fn equation_residual(coeffs: &CoefficientField, alpha: FracOrder, u: &GridFunction, f: &GridFunction) -> Result<GridFunction> {
    let du = u.caputo(alpha)?;
    let m = u.space.num_nodes();
    let mut out = vec![0.0; u.values().len()];
    for k in 1..=u.time.n {
        let op = assemble_operator(coeffs, k)?;
        let au = op.matvec(u.time_slice(k));
        for s in 0..m {
            out[k * m + s] = -du.get(k, s, 0) + au[s] - f.get(k, s, 0);
        }
    }
    GridFunction::new(u.time, u.space, 1, out)
}

/// Exact `u* = t² sin(2π x_1 / L)`.
pub fn manufactured_exact(time: TimeGrid, space: SpaceGrid) -> GridFunction {
    let k = std::f64::consts::TAU / space.box_length();
    GridFunction::from_fn(time, space, |t, x| t * t * (k * x[0]).sin())
}

/// `f = -∂_t^α u* + a^{ij}D_{ij}u* + b^iD_iu* + cu*` from closed forms.
pub fn manufactured_rhs(coeffs: &CoefficientField, alpha: FracOrder) -> Result<GridFunction> {
    let time = coeffs.time();
    let sp = coeffs.space();
    let a = alpha.value();
    let g3 = gamma_fn(3.0 - a)?;
    let k = std::f64::consts::TAU / sp.box_length();
    let m = sp.num_nodes();
    let mut vals = vec![0.0; time.nodes() * m];
    for kk in 0..time.nodes() {
        let t = time.time(kk);
        for s in 0..m {
            let x = sp.coords(s)[0];
            let (sn, cs) = (k * x).sin_cos();
            let caputo = 2.0 * (t - time.t0).max(0.0).powf(2.0 - a) / g3 * sn;
            let u = t * t * sn;
            let lead = coeffs.a_at(kk, s)[0] * (-k * k) * u;
            let drift = coeffs.b_at(kk, s)[0] * k * t * t * cs;
            vals[kk * m + s] = -caputo + lead + drift + coeffs.c_at(kk, s) * u;
        }
    }
    GridFunction::new(time, sp, 1, vals)
}

/// Zero extension of `u` to an earlier origin together with the gap between
/// `I_S^{1-α}ū` and `I_{t0}^{1-α}u` on the original nodes.
#[derive(Debug, Clone)]
pub struct ZeroExtension {
    pub u: GridFunction,
    pub identity_gap: f64,
}

pub fn zero_extend(u: &GridFunction, origin: f64, alpha: FracOrder) -> Result<ZeroExtension> {
    let t0 = u.time.t0;
    let h = u.time.h;
    let gap = t0 - origin;
    let p = (gap / h).round();
    if gap < -1e-9 * h || (gap - p * h).abs() > 1e-9 * h * p.max(1.0) {
        return Err(Error::Argument(format!("new origin {origin} must lie on the grid before {t0}")));
    }
    let p = p as usize;
    let w = u.slab();
    let scale = u.max_abs().max(1.0);
    if u.time_slice(0).iter().any(|v| v.abs() > 1e-14 * scale) {
        return Err(Error::Precondition("zero extension needs u(t0) = 0".into()));
    }
    let time = TimeGrid::new(origin, h, u.time.n + p)?;
    let mut vals = vec![0.0; p * w];
    vals.extend_from_slice(u.values());
    let ext = GridFunction::new(time, u.space, u.components, vals)?;
    let beta = alpha.complement();
    let i_ext = ext.frac_integral(beta, origin)?;
    let i_orig = u.frac_integral(beta, t0)?;
    let identity_gap = i_ext.values()[p * w..]
        .iter()
        .zip(i_orig.values())
        .fold(0.0f64, |mx, (a, b)| mx.max((a - b).abs()));
    Ok(ZeroExtension { u: ext, identity_gap })
}

/// Pointwise and aggregated energy quantities of a vector series.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    /// `(∂_t^α v)·v - ½ ∂_t^α|v|²` per node.
    pub margins: Vec<f64>,
    /// `Σ_n h (∂_t^α v)^n · v^n`.
    pub integral: f64,
    pub min_margin: f64,
    /// `c0 · max|v|²`, the natural size of each term.
    pub scale: f64,
    /// Nodes with margin below `-1e-12·scale`.
    pub violations: Vec<(usize, f64)>,
}

/// Evaluates the discrete coercivity margin for `v` with `v^0 = 0`
/// (`width` components per node).
pub fn energy_check(v: &TimeSeries, alpha: FracOrder) -> Result<EnergyReport> {
    let scale_v = v.max_abs().max(f64::MIN_POSITIVE);
    if v.node(0).iter().any(|x| x.abs() > 1e-14 * scale_v) {
        return Err(Error::Precondition("energy check needs v^0 = 0".into()));
    }
    let dv = fraccore::caputo_derivative(v, alpha)?;
    let sq_vals: Vec<f64> = (0..=v.n()).map(|k| v.node(k).iter().map(|x| x * x).sum()).collect();
    let max_sq = sq_vals.iter().copied().fold(0.0, f64::max);
    let sq = TimeSeries::new(v.t0, v.h, 1, sq_vals)?;
    let dsq = fraccore::caputo_derivative(&sq, alpha)?;
    let c0 = v.h.powf(-alpha.value()) / gamma_fn(2.0 - alpha.value())?;
    let scale = c0 * max_sq;
    let margins: Vec<f64> = (0..=v.n())
        .map(|k| {
            let dot: f64 = dv.node(k).iter().zip(v.node(k)).map(|(a, b)| a * b).sum();
            dot - 0.5 * dsq.at(k)
        })
        .collect();
    let integral = (1..=v.n())
        .map(|k| dv.node(k).iter().zip(v.node(k)).map(|(a, b)| a * b).sum::<f64>())
        .sum::<f64>()
        * v.h;
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let violations = margins
        .iter()
        .enumerate()
        .filter(|(_, &m)| m < -1e-12 * scale)
        .map(|(k, &m)| (k, m))
        .collect();
    Ok(EnergyReport { margins, integral, min_margin, scale, violations })
}

/// Both sides of the local estimate on slabs `(0,T) × B_r ⊂ (0,T) × B_R`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEstimateReport {
    pub lhs: f64,
    pub v_term: f64,
    pub f_term: f64,
    /// `lhs / (v_term / (R-r)² + f_term)`; 0 when both sides vanish.
    pub ratio: f64,
}

pub fn local_estimate_check(
    v: &GridFunction,
    f: &GridFunction,
    alpha: FracOrder,
    center: &[f64],
    r: f64,
    big_r: f64,
    p: f64,
) -> Result<LocalEstimateReport> {
    if !(r > 0.0 && r < big_r) {
        return Err(Error::Argument(format!("need 0 < r < R, got r = {r}, R = {big_r}")));
    }
    let inner = NormDomain::Slab { t_lo: v.time.t0, t_hi: v.time.t_end(), center: center.to_vec(), radius: r };
    let outer = NormDomain::Slab { t_lo: v.time.t0, t_hi: v.time.t_end(), center: center.to_vec(), radius: big_r };
    let ni = crate::grids::domain_nodes(&inner, &v.time, &v.space);
    let no = crate::grids::domain_nodes(&outer, &v.time, &v.space);
    if ni.is_empty() {
        return Err(Error::MeasureZero("inner ball contains no lattice node".into()));
    }
    let cell = v.time.h * v.space.cell_volume();
    let dv = crate::grids::select(v, crate::grids::Selector::Caputo(alpha))?;
    let d2 = crate::grids::select(v, crate::grids::Selector::Hessian)?;
    let fa = crate::grids::select(f, crate::grids::Selector::Value)?;
    let va = crate::grids::select(v, crate::grids::Selector::Value)?;
    let lhs = lp_of_nodes(dv.values(), &ni, p, cell) + lp_of_nodes(d2.values(), &ni, p, cell);
    let v_term = lp_of_nodes(va.values(), &no, p, cell);
    let f_term = lp_of_nodes(fa.values(), &no, p, cell);
    let den = v_term / (big_r - r).powi(2) + f_term;
    let ratio = if den == 0.0 { 0.0 } else { lhs / den };
    Ok(LocalEstimateReport { lhs, v_term, f_term, ratio })
}

/// Reverses a field in time on nodes `1..=N` (`n ↔ N+1-n`); node 0 is kept.
pub fn time_reverse(g: &GridFunction) -> GridFunction {
    let n = g.time.n;
    let w = g.slab();
    let mut out = g.values().to_vec();
    for k in 1..=n {
        out[k * w..(k + 1) * w].copy_from_slice(g.time_slice(n + 1 - k));
    }
    g.with_values(out)
}

/// Coefficients reversed in time the same way as [`time_reverse`].
pub fn reverse_coefficients(c: &CoefficientField) -> CoefficientField {
    CoefficientField { a: time_reverse(&c.a), b: time_reverse(&c.b), c: time_reverse(&c.c), ..c.clone() }
}

/// Discrete space-time pairing `Σ_{k ≥ 1} h Δ^d f g`.
pub fn pairing(f: &GridFunction, g: &GridFunction) -> f64 {
    let w = f.slab();
    f.values()[w..].iter().zip(&g.values()[w..]).map(|(a, b)| a * b).sum::<f64>() * f.time.h * f.space.cell_volume()
}

/// The two sides `⟨φ, D_{ij}u⟩` and `⟨f, D_{ij}w̃(reversed)⟩` of the duality
/// computation, where `u` solves with `(a, f)` and `w̃` with the
/// time-reversed coefficients and data `φ`. Needs `x`-independent
/// coefficients with `b = 0`.
pub fn duality_pairings(cfg: &SolveConfig, phi: &GridFunction, ij: (usize, usize)) -> Result<(f64, f64)> {
    if !cfg.coeffs.time_only || cfg.coeffs.b.max_abs() != 0.0 {
        return Err(Error::Hypothesis("duality check needs x-independent coefficients with b = 0".into()));
    }
    let d = cfg.rhs.space.dim();
    let (i, j) = ij;
    if i >= d || j >= d {
        return Err(Error::Argument(format!("derivative index ({i}, {j}) out of range for d = {d}")));
    }
    let pick = |g: &GridFunction| -> GridFunction {
        let h = crate::grids::finite_diff(g, 2).expect("order 2");
        let vals = h.values().chunks(d * d).map(|c| c[i * d + j]).collect();
        GridFunction::new(g.time, g.space, 1, vals).expect("layout")
    };
    let u = solve(cfg)?.u;
    let rev = SolveConfig { coeffs: reverse_coefficients(&cfg.coeffs), rhs: time_reverse(phi), ..cfg.clone() };
    let w = solve(&rev)?.u;
    let lhs = pairing(phi, &pick(&u));
    let rhs = pairing(&cfg.rhs, &pick(&time_reverse(&w)));
    Ok((lhs, rhs))
}
