//! Composite Sobolev norms, a priori constant estimation, embedding
//! inequality verifiers and the exponent ladder.
//!
//! No constant here is known in closed form. Every verifier reports the ratio
//! `LHS / RHS` with the unknown constant dropped, and its fitted supremum
//! over an ensemble is a lattice lower bound of the true constant.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::coeffs::gen_rough_time;
use crate::error::{Error, Result};
use crate::fraccore::{self, FracOrder, TimeSeries};
use crate::grids::{self, holder_seminorm, lp_of_nodes, GridFunction, NormDomain, Selector, SpaceGrid, TimeGrid};
use crate::rng::{self, purpose};
use crate::solver::{solve, SolveConfig};

/// `‖∂_t^α u‖_p + ‖u‖_p + ‖|Du|‖_p + ‖|D²u|‖_p` with its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevNorm {
    pub p: f64,
    pub caputo: f64,
    pub value: f64,
    pub gradient: f64,
    pub hessian: f64,
    pub total: f64,
}

pub fn h_alpha2_norm(u: &GridFunction, p: f64, alpha: FracOrder) -> Result<SobolevNorm> {
    h_alpha2_norm_on(u, p, alpha, &NormDomain::Full)
}

pub fn h_alpha2_norm_on(u: &GridFunction, p: f64, alpha: FracOrder, domain: &NormDomain) -> Result<SobolevNorm> {
    let nodes = grids::domain_nodes(domain, &u.time, &u.space);
    if nodes.is_empty() {
        return Err(Error::MeasureZero("norm domain contains no lattice node".into()));
    }
    let cell = u.time.h * u.space.cell_volume();
    let part = |sel: Selector| -> Result<f64> { Ok(lp_of_nodes(grids::select(u, sel)?.values(), &nodes, p, cell)) };
    let caputo = part(Selector::Caputo(alpha))?;
    let value = part(Selector::Value)?;
    let gradient = part(Selector::Gradient)?;
    let hessian = part(Selector::Hessian)?;
    Ok(SobolevNorm { p, caputo, value, gradient, hessian, total: caputo + value + gradient + hessian })
}

/// Right-hand sides used by the ensembles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhsSpec {
    Zero,
    /// Random trigonometric modes `|k_i| ≤ modes` times a random smooth
    /// time profile.
    Trig { modes: usize },
}

/// Random right-hand side for a seed.
pub fn random_rhs(seed: u64, spec: RhsSpec, time: TimeGrid, space: SpaceGrid) -> GridFunction {
    match spec {
        RhsSpec::Zero => GridFunction::zeros(time, space, 1),
        RhsSpec::Trig { modes } => {
            let mut rng = rng::stream(seed, purpose::RHS);
            let d = space.dim();
            let l = space.box_length();
            let terms: Vec<([f64; 3], f64, f64, f64, f64)> = (0..4)
                .map(|_| {
                    let mut k = [0.0; 3];
                    for ka in k.iter_mut().take(d) {
                        *ka = rng.gen_range(-(modes as i64)..=modes as i64) as f64;
                    }
                    (k, rng.gen_range(0.0..std::f64::consts::TAU), rng::normal(&mut rng), rng.gen_range(0.5..4.0), rng.gen_range(0.0..3.0))
                })
                .collect();
            GridFunction::from_fn(time, space, |t, x| {
                terms
                    .iter()
                    .map(|(k, ph, c, om, sh)| {
                        let arg: f64 = (0..d).map(|a| k[a] * x[a]).sum::<f64>() * std::f64::consts::TAU / l;
                        c * (arg + ph).cos() * (om * t + sh).sin()
                    })
                    .sum()
            })
        }
    }
}

/// Ensemble for the a priori constant with rough-in-time coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub d: usize,
    pub alpha: FracOrder,
    pub delta: f64,
    pub n_switches: usize,
    pub m: usize,
    pub n: usize,
    pub box_length: f64,
    pub t_end: f64,
    pub seeds: Vec<u64>,
    pub rhs: RhsSpec,
}

impl EnsembleSpec {
    pub fn grids(&self) -> Result<(TimeGrid, SpaceGrid)> {
        Ok((TimeGrid::uniform(self.t_end, self.n)?, SpaceGrid::new(self.d, self.box_length, self.m)?))
    }

    /// Same ensemble with `n` and `m` doubled.
    pub fn refined(&self) -> Self {
        EnsembleSpec { m: 2 * self.m, n: 2 * self.n, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AprioriReport {
    /// Largest nonzero ratio.
    pub n_hat: f64,
    /// `(seed, ratio)`; `None` for a vanishing right-hand side.
    pub ratios: Vec<(u64, Option<f64>)>,
    /// `max / min` over the nonzero ratios.
    pub spread: f64,
}

/// `(‖∂_t^α u‖_p + ‖D²u‖_p) / ‖f‖_p` over an ensemble of coefficient and
/// right-hand-side seeds.
pub fn apriori_constant(spec: &EnsembleSpec, p: f64) -> Result<AprioriReport> {
    let (time, space) = spec.grids()?;
    let results: Vec<Result<(u64, Option<f64>)>> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let tag = |e: Error| match e {
                Error::Solver { step, message, trace } => Error::Solver { step, message: format!("seed {seed}: {message}"), trace },
                other => Error::Generation(format!("seed {seed}: {other}")),
            };
            let coeffs = gen_rough_time(seed, spec.delta, spec.n_switches, time, space).map_err(tag)?;
            let f = random_rhs(seed, spec.rhs, time, space);
            let nf = grids::lp_norm(&f, &grids::NormSpec::full(p)?)?;
            if nf == 0.0 {
                return Ok((seed, None));
            }
            let u = solve(&SolveConfig::new(spec.alpha, coeffs, f)).map_err(tag)?.u;
            let s = h_alpha2_norm(&u, p, spec.alpha)?;
            Ok((seed, Some((s.caputo + s.hessian) / nf)))
        })
        .collect();
    let ratios = results.into_iter().collect::<Result<Vec<_>>>()?;
    let vals: Vec<f64> = ratios.iter().filter_map(|r| r.1).collect();
    if let Some(bad) = vals.iter().find(|v| !v.is_finite()) {
        return Err(Error::Solver { step: 0, message: format!("non-finite ratio {bad}"), trace: vec![] });
    }
    let n_hat = vals.iter().copied().fold(0.0, f64::max);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = if vals.is_empty() { 1.0 } else { n_hat / min };
    Ok(AprioriReport { n_hat, ratios, spread })
}

/// Identifiers of the embedding and integral inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InequalityId {
    /// `‖I^α ψ‖_q ≤ N ‖ψ‖_p`, `α - 1/p = -1/q`.
    AIntBound,
    /// `‖I^α ψ‖_q ≤ N T^{α-1/p+1/q} ‖ψ‖_p`, `α - 1/p > -1/q`.
    AIntBoundT,
    /// `‖ψ‖_q ≤ N T^{α-1/p+1/q} ‖∂_t^α ψ‖_p`, `α - 1/p > -1/q`.
    AInverseEmbed,
    /// `‖ψ‖_q ≤ N ‖∂_t^α ψ‖_p^θ ‖ψ‖_r^{1-θ}`.
    AMult,
    /// `p < min{1/α, d/2}`, `p < q ≤ q*`.
    ELowP,
    /// `d/2 < p < 1/α`, `p < q ≤ p(αp+1)`.
    EMid,
    /// `1/α < p < d/2`, `p < q ≤ p + 2p²/d`.
    EHighD,
    /// `max{1/α, d/2} < p ≤ d/2 + 1/α`, `p < q ≤ 2p`.
    EBand,
    /// `|ψ(t_2) - ψ(t_1)| ≤ N (t_2-t_1)^{α-1/p} ‖∂_t^α ψ‖_p`, `α > 1/p`.
    ETimeHolder,
    /// `[ψ]_{C^{σα/2,σ}} ≤ N ‖ψ‖_{H_p^{α,2}}`, `σ = 2 - (d+2/α)/p ∈ (0,1)`.
    EHolder,
}

impl InequalityId {
    pub const ALL: [InequalityId; 10] = [
        InequalityId::AIntBound,
        InequalityId::AIntBoundT,
        InequalityId::AInverseEmbed,
        InequalityId::AMult,
        InequalityId::ELowP,
        InequalityId::EMid,
        InequalityId::EHighD,
        InequalityId::EBand,
        InequalityId::ETimeHolder,
        InequalityId::EHolder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InequalityId::AIntBound => "A-int-bound",
            InequalityId::AIntBoundT => "A-int-bound-T",
            InequalityId::AInverseEmbed => "A-inverse-embed",
            InequalityId::AMult => "A-mult",
            InequalityId::ELowP => "E-low-p",
            InequalityId::EMid => "E-mid",
            InequalityId::EHighD => "E-high-d",
            InequalityId::EBand => "E-band",
            InequalityId::ETimeHolder => "E-time-holder",
            InequalityId::EHolder => "E-holder",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown inequality id {s:?}")))
    }

    /// Only time is involved.
    pub fn time_only(self) -> bool {
        matches!(
            self,
            InequalityId::AIntBound | InequalityId::AIntBoundT | InequalityId::AInverseEmbed | InequalityId::AMult | InequalityId::ETimeHolder
        )
    }

    /// Parameters inside each hypothesis.
    pub fn default_params(self) -> InequalityParams {
        let base = InequalityParams { d: 1, alpha: 0.5, p: 2.0, q: None, r: 2.0, theta: 0.5, t_end: 1.0 };
        match self {
            InequalityId::AIntBound => InequalityParams { alpha: 0.3, p: 2.0, q: Some(5.0), ..base },
            InequalityId::AIntBoundT => InequalityParams { alpha: 0.3, p: 2.0, q: Some(3.0), ..base },
            InequalityId::AInverseEmbed => InequalityParams { alpha: 0.5, p: 2.0, q: Some(4.0), ..base },
            InequalityId::AMult => InequalityParams { alpha: 0.3, p: 2.0, r: 2.0, theta: 0.5, ..base },
            InequalityId::ELowP => InequalityParams { d: 3, alpha: 0.5, p: 1.2, ..base },
            InequalityId::EMid => InequalityParams { d: 1, alpha: 0.3, p: 2.0, q: Some(3.0), ..base },
            InequalityId::EHighD => InequalityParams { d: 3, alpha: 0.9, p: 1.3, q: Some(2.0), ..base },
            InequalityId::EBand => InequalityParams { d: 1, alpha: 0.5, p: 2.2, q: Some(4.0), ..base },
            InequalityId::ETimeHolder => InequalityParams { alpha: 0.7, p: 2.0, ..base },
            InequalityId::EHolder => InequalityParams { d: 1, alpha: 0.5, p: 4.0, ..base },
        }
    }
}

impl fmt::Display for InequalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Exponents requested for a verifier. `q = None` selects the id's
/// critical exponent where one exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityParams {
    pub d: usize,
    pub alpha: f64,
    pub p: f64,
    pub q: Option<f64>,
    pub r: f64,
    pub theta: f64,
    pub t_end: f64,
}

/// Validated exponents with all derived quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    pub d: usize,
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    /// Interpolation weight where the inequality has one.
    pub theta: f64,
    /// Second weight of the low-`p` embedding.
    pub tau: f64,
    pub sigma: f64,
    /// Power of `T` on the right-hand side.
    pub t_power: f64,
    /// `q = q*` in the low-`p` embedding.
    pub critical: bool,
}

impl fmt::Display for Exponents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d={};alpha={};p={};q={}", self.d, self.alpha, self.p, self.q)
    }
}

/// `q* = (1/α + d/2) / (1/(αp) + d/(2p) - 1)`.
pub fn q_star(d: usize, alpha: f64, p: f64) -> f64 {
    let d = d as f64;
    (1.0 / alpha + d / 2.0) / (1.0 / (alpha * p) + d / (2.0 * p) - 1.0)
}

const TOL: f64 = 1e-12;

fn violated(id: InequalityId, cond: &str) -> Error {
    Error::Hypothesis(format!("{id}: {cond}"))
}

/// Validates the exponents against the hypothesis of `id`.
pub fn check_hypothesis(id: InequalityId, prm: &InequalityParams) -> Result<Exponents> {
    let InequalityParams { d, alpha, p, q, r, theta, t_end } = *prm;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(violated(id, "0 < α < 1"));
    }
    if !(p > 1.0) || !p.is_finite() {
        return Err(violated(id, "1 < p < ∞"));
    }
    if !(t_end > 0.0) {
        return Err(Error::Argument(format!("T must be positive, got {t_end}")));
    }
    if d == 0 {
        return Err(Error::Argument("dimension must be positive".into()));
    }
    let df = d as f64;
    let mut e = Exponents { d, alpha, p, q: f64::NAN, r, theta: f64::NAN, tau: f64::NAN, sigma: f64::NAN, t_power: 0.0, critical: false };
    let need_q = |q: Option<f64>| q.ok_or_else(|| Error::Argument(format!("{id} needs an explicit q")));
    match id {
        InequalityId::AIntBound => {
            let q = need_q(q)?;
            if !(alpha < 1.0 / p) {
                return Err(violated(id, "α < 1/p"));
            }
            if !(q > p) {
                return Err(violated(id, "q > p"));
            }
            if ((alpha - 1.0 / p) + 1.0 / q).abs() > TOL {
                return Err(violated(id, "α - 1/p = -1/q"));
            }
            e.q = q;
        }
        InequalityId::AIntBoundT | InequalityId::AInverseEmbed => {
            let q = need_q(q)?;
            if !(q >= 1.0) {
                return Err(violated(id, "q ≥ 1"));
            }
            if !(alpha - 1.0 / p > -1.0 / q) {
                return Err(violated(id, "α - 1/p > -1/q"));
            }
            e.q = q;
            e.t_power = alpha - 1.0 / p + 1.0 / q;
        }
        InequalityId::AMult => {
            if !(alpha < 1.0 / p) {
                return Err(violated(id, "α < 1/p"));
            }
            if !(r > 1.0) || !(0.0..=1.0).contains(&theta) {
                return Err(violated(id, "r > 1 and θ ∈ [0,1]"));
            }
            let inv_q = (1.0 / p - alpha) * theta + (1.0 - theta) / r;
            let qq = 1.0 / inv_q;
            if let Some(q) = q {
                if (1.0 / q - inv_q).abs() > TOL {
                    return Err(violated(id, "1/q = (1/p - α)θ + (1-θ)/r"));
                }
            }
            if !(qq > 1.0 && qq.is_finite()) {
                return Err(violated(id, "q ∈ (1, ∞)"));
            }
            e.q = qq;
            e.theta = theta;
        }
        InequalityId::ELowP => {
            if !(p < (1.0 / alpha).min(df / 2.0)) {
                return Err(violated(id, "p < min{1/α, d/2}"));
            }
            let qs = q_star(d, alpha, p);
            let q = q.unwrap_or(qs);
            if !(q > p) {
                return Err(violated(id, "q > p"));
            }
            if q > qs * (1.0 + TOL) {
                return Err(violated(id, &format!("q ≤ q* = {qs}")));
            }
            e.q = q;
            e.critical = (q - qs).abs() <= TOL * qs;
            if !e.critical {
                e.theta = df / 2.0 * (1.0 / p - 1.0 / q);
                e.tau = 2.0 / (alpha * df) * e.theta / (1.0 - e.theta);
                if !(e.theta > 0.0 && e.theta < 1.0 && e.tau > 0.0 && e.tau < 1.0) {
                    return Err(violated(id, "θ, τ ∈ (0,1)"));
                }
            }
        }
        InequalityId::EMid => {
            if !(df / 2.0 < p && p < 1.0 / alpha) {
                return Err(violated(id, "d/2 < p < 1/α"));
            }
            let q = need_q(q)?;
            if !(q > p && q <= p * (alpha * p + 1.0) * (1.0 + TOL)) {
                return Err(violated(id, &format!("p < q ≤ p(αp+1) = {}", p * (alpha * p + 1.0))));
            }
            e.q = q;
            e.theta = (1.0 / p - 1.0 / q) / alpha;
        }
        InequalityId::EHighD => {
            if !(1.0 / alpha < p && p < df / 2.0) {
                return Err(violated(id, "1/α < p < d/2"));
            }
            let q = need_q(q)?;
            let top = p + 2.0 * p * p / df;
            if !(q > p && q <= top * (1.0 + TOL)) {
                return Err(violated(id, &format!("p < q ≤ p + 2p²/d = {top}")));
            }
            e.q = q;
            e.theta = df * (q - p) / (2.0 * p * p);
            e.t_power = alpha * (1.0 - p / q) - 1.0 / p + 1.0 / q;
        }
        InequalityId::EBand => {
            if !((1.0 / alpha).max(df / 2.0) < p && p <= (df / 2.0 + 1.0 / alpha) * (1.0 + TOL)) {
                return Err(violated(id, "max{1/α, d/2} < p ≤ d/2 + 1/α"));
            }
            let q = need_q(q)?;
            if !(q > p && q <= 2.0 * p * (1.0 + TOL)) {
                return Err(violated(id, "p < q ≤ 2p"));
            }
            e.q = q;
            e.theta = p / q;
            e.t_power = alpha * p / q - 1.0 / p + 1.0 / q;
        }
        InequalityId::ETimeHolder => {
            if !(alpha > 1.0 / p) {
                return Err(violated(id, "α > 1/p"));
            }
            e.q = f64::INFINITY;
        }
        InequalityId::EHolder => {
            let sigma = 2.0 - (df + 2.0 / alpha) / p;
            if !(sigma > 0.0 && sigma < 1.0) {
                return Err(violated(id, "σ = 2 - (d + 2/α)/p ∈ (0,1)"));
            }
            e.sigma = sigma;
            e.q = f64::INFINITY;
        }
    }
    Ok(e)
}

/// Random smooth test function with `ψ(0,·) = 0` and zero spatial mean:
/// `Σ_j Σ_e c_{je} t^e cos(2π k_j·x/L + φ_j)`, `c_{je} ~ N(0,1)/|k_j|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiSpec {
    pub modes: usize,
    pub terms: usize,
    pub degree: usize,
}

impl Default for PsiSpec {
    fn default() -> Self {
        PsiSpec { modes: 2, terms: 3, degree: 3 }
    }
}

pub fn random_psi(seed: u64, spec: PsiSpec, time: TimeGrid, space: SpaceGrid) -> GridFunction {
    let mut rng = rng::stream(seed, purpose::TEST_FUNCTION);
    let d = space.dim();
    let l = space.box_length();
    let terms: Vec<([f64; 3], f64, Vec<f64>)> = (0..spec.terms.max(1))
        .map(|_| {
            let mut k = [0.0; 3];
            loop {
                for ka in k.iter_mut().take(d) {
                    *ka = rng.gen_range(-(spec.modes as i64)..=spec.modes as i64) as f64;
                }
                if k.iter().any(|&v| v != 0.0) {
                    break;
                }
            }
            let k2: f64 = k.iter().map(|v| v * v).sum();
            let coef = (0..spec.degree.max(1)).map(|_| rng::normal(&mut rng) / k2).collect();
            (k, rng.gen_range(0.0..std::f64::consts::TAU), coef)
        })
        .collect();
    let t0 = time.t0;
    GridFunction::from_fn(time, space, |t, x| {
        let s = t - t0;
        terms
            .iter()
            .map(|(k, ph, coef)| {
                let arg: f64 = (0..d).map(|a| k[a] * x[a]).sum::<f64>() * std::f64::consts::TAU / l;
                let poly: f64 = coef.iter().enumerate().map(|(e, c)| c * s.powi(e as i32 + 1)).sum();
                poly * (arg + ph).cos()
            })
            .sum()
    })
}

/// Random polynomial in `t` with zero constant term.
pub fn random_time_psi(seed: u64, degree: usize, time: TimeGrid) -> TimeSeries {
    let mut rng = rng::stream(seed, purpose::TEST_FUNCTION);
    let coef: Vec<f64> = (0..degree.max(1)).map(|_| rng::normal(&mut rng)).collect();
    let t0 = time.t0;
    TimeSeries::from_fn(t0, time.h, time.n, |t| coef.iter().enumerate().map(|(e, c)| c * (t - t0).powi(e as i32 + 1)).sum())
}

/// One verifier evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub id: InequalityId,
    pub seed: u64,
    pub exponents: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `None` when both sides vanish.
    pub ratio: Option<f64>,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    pub rows: Vec<RatioRow>,
    pub max_ratio: f64,
    pub median: f64,
}

impl RatioTable {
    fn from_rows(rows: Vec<RatioRow>) -> Self {
        let mut vals: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let max_ratio = vals.last().copied().unwrap_or(0.0);
        let median = if vals.is_empty() { 0.0 } else { vals[vals.len() / 2] };
        RatioTable { rows, max_ratio, median }
    }
}

fn lp_series(v: &[f64], p: f64, h: f64) -> f64 {
    if p.is_infinite() {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    } else {
        (v.iter().map(|x| x.abs().powf(p)).sum::<f64>() * h).powf(1.0 / p)
    }
}

/// Time-only ratio for one scalar series.
fn time_ratio(id: InequalityId, e: &Exponents, psi: &TimeSeries) -> Result<(f64, f64)> {
    let a = FracOrder::new(e.alpha)?;
    let h = psi.h;
    let tail = |s: &TimeSeries| s.values()[1..].to_vec();
    let t_fac = (psi.n() as f64 * h).powf(e.t_power);
    Ok(match id {
        InequalityId::AIntBound | InequalityId::AIntBoundT => {
            let i = fraccore::frac_integral(psi, a, psi.t0)?;
            (lp_series(&tail(&i), e.q, h), t_fac * lp_series(&tail(psi), e.p, h))
        }
        InequalityId::AInverseEmbed => {
            let d = fraccore::caputo_derivative(psi, a)?;
            (lp_series(&tail(psi), e.q, h), t_fac * lp_series(&tail(&d), e.p, h))
        }
        InequalityId::AMult => {
            let d = fraccore::caputo_derivative(psi, a)?;
            let lhs = lp_series(&tail(psi), e.q, h);
            let rhs = lp_series(&tail(&d), e.p, h).powf(e.theta) * lp_series(&tail(psi), e.r, h).powf(1.0 - e.theta);
            (lhs, rhs)
        }
        InequalityId::ETimeHolder => {
            let d = fraccore::caputo_derivative(psi, a)?;
            let v = psi.values();
            let ex = e.alpha - 1.0 / e.p;
            let mut best = 0.0f64;
            for i in 0..v.len() {
                for j in (i + 1)..v.len() {
                    best = best.max((v[j] - v[i]).abs() / (((j - i) as f64) * h).powf(ex));
                }
            }
            (best, lp_series(&tail(&d), e.p, h))
        }
        _ => unreachable!("space-time id"),
    })
}

/// Space-time ratio for one test function.
fn space_time_ratio(id: InequalityId, e: &Exponents, psi: &GridFunction, seed: u64) -> Result<(f64, f64)> {
    let a = FracOrder::new(e.alpha)?;
    let nodes = grids::domain_nodes(&NormDomain::Full, &psi.time, &psi.space);
    let cell = psi.time.h * psi.space.cell_volume();
    let norm = |g: &GridFunction, p: f64| lp_of_nodes(g.values(), &nodes, p, cell);
    let val = grids::select(psi, Selector::Value)?;
    let t_fac = (psi.time.t_end() - psi.time.t0).powf(e.t_power);
    let s = h_alpha2_norm(psi, e.p, a)?;
    let spatial = s.value + s.gradient + s.hessian;
    Ok(match id {
        InequalityId::ELowP => {
            let lhs = norm(&val, e.q);
            let rhs = if e.critical {
                let ad = e.alpha * e.d as f64;
                s.hessian.powf(ad / (2.0 + ad)) * s.caputo.powf(2.0 / (2.0 + ad))
            } else {
                s.hessian.powf(e.theta) * s.caputo.powf(e.tau * (1.0 - e.theta)) * s.value.powf((1.0 - e.tau) * (1.0 - e.theta))
            };
            (lhs, rhs)
        }
        InequalityId::EMid => (norm(&val, e.q), spatial.powf(1.0 - e.theta) * s.caputo.powf(e.theta)),
        InequalityId::EHighD => {
            let pq = e.p / e.q;
            let rhs = t_fac * s.caputo.powf(1.0 - pq) * s.hessian.powf(e.theta * pq) * s.value.powf((1.0 - e.theta) * pq);
            (norm(&val, e.q), rhs)
        }
        InequalityId::EBand => (norm(&val, e.q), t_fac * spatial.powf(1.0 - e.theta) * s.caputo.powf(e.theta)),
        InequalityId::EHolder => (holder_seminorm(psi, e.sigma, a, seed)?.value, s.total),
        _ => unreachable!("time-only id"),
    })
}

/// Lattice used for an id at a resolution level: `n` time steps and `m`
/// cells per axis.
pub fn verifier_grids(id: InequalityId, e: &Exponents, resolution: usize, t_end: f64) -> Result<(TimeGrid, SpaceGrid)> {
    let time = TimeGrid::uniform(t_end, resolution)?;
    // B_1 is emulated by the box [0, 2)^d for the local embeddings
    let length = if matches!(id, InequalityId::EMid | InequalityId::EBand | InequalityId::EHolder) { 2.0 } else { 1.0 };
    let m = match e.d {
        1 => resolution,
        2 => (resolution / 2).max(8),
        _ => (resolution / 4).max(8),
    };
    Ok((time, SpaceGrid::new(e.d.min(3), length, m)?))
}

/// Evaluates `id` on random test functions for each seed.
pub fn verify_inequality(id: InequalityId, params: &InequalityParams, seeds: &[u64], resolution: usize) -> Result<RatioTable> {
    let e = check_hypothesis(id, params)?;
    if !id.time_only() && e.d > 3 {
        return Err(Error::Argument(format!("{id}: lattices support d ≤ 3, got {}", e.d)));
    }
    let rows: Vec<Result<RatioRow>> = seeds
        .par_iter()
        .map(|&seed| {
            let (lhs, rhs) = if id.time_only() {
                let time = TimeGrid::uniform(params.t_end, resolution)?;
                time_ratio(id, &e, &random_time_psi(seed, 3, time))?
            } else {
                let (time, space) = verifier_grids(id, &e, resolution, params.t_end)?;
                let spec = PsiSpec { modes: if e.d == 1 { 2 } else { 1 }, ..PsiSpec::default() };
                space_time_ratio(id, &e, &random_psi(seed, spec, time, space), seed)?
            };
            let ratio = if lhs == 0.0 && rhs == 0.0 { None } else { Some(lhs / rhs) };
            Ok(RatioRow { id, seed, exponents: e.to_string(), lhs, rhs, ratio, resolution })
        })
        .collect();
    Ok(RatioTable::from_rows(rows.into_iter().collect::<Result<_>>()?))
}

/// Max ratio at `resolution` and `2·resolution` and their quotient.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementReport {
    pub coarse: RatioTable,
    pub fine: RatioTable,
    pub growth: f64,
}

pub fn refinement_study(id: InequalityId, params: &InequalityParams, seeds: &[u64], resolution: usize) -> Result<RefinementReport> {
    let coarse = verify_inequality(id, params, seeds, resolution)?;
    let fine = verify_inequality(id, params, seeds, 2 * resolution)?;
    let growth = if coarse.max_ratio > 0.0 { fine.max_ratio / coarse.max_ratio } else { 1.0 };
    Ok(RefinementReport { coarse, fine, growth })
}

/// Which admissible interval the ladder used at a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LadderCase {
    /// `p ≤ 1/α`, `p ≤ d/2`: `(p, q*)`.
    LowBoth,
    /// `d/2 < p ≤ 1/α`: `(p, p(αp+1))`.
    LowTime,
    /// `1/α < p ≤ d/2`: `(p, p + 2p²/d)`.
    LowSpace,
    /// `max{1/α, d/2} < p ≤ d/2 + 1/α`: `(p, 2p)`.
    Band,
    /// `p > d/2 + 1/α`: `p₁ = ∞`.
    Infinite,
}

impl LadderCase {
    pub fn label(self) -> &'static str {
        match self {
            LadderCase::LowBoth => "p<=1/a,p<=d/2",
            LadderCase::LowTime => "p<=1/a,p>d/2",
            LadderCase::LowSpace => "p>1/a,p<=d/2",
            LadderCase::Band => "p>d/2,p<=d/2+1/a",
            LadderCase::Infinite => "p>d/2+1/a",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderStep {
    pub p: f64,
    pub case: LadderCase,
    /// Admissible open interval `(p, upper)`; `upper = ∞` in the last case.
    pub interval: (f64, f64),
    pub p1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderState {
    pub d: usize,
    pub alpha: f64,
    pub p_start: f64,
    pub steps: Vec<LadderStep>,
    pub terminated: bool,
}

/// `min{2α/(αd + 2 - 2α), α, 2/d}`.
pub fn min_increment(d: usize, alpha: f64) -> f64 {
    let df = d as f64;
    (2.0 * alpha / (alpha * df + 2.0 - 2.0 * alpha)).min(alpha).min(2.0 / df)
}

/// One ladder step from `p`.
pub fn ladder_step(d: usize, alpha: f64, p: f64) -> LadderStep {
    let df = d as f64;
    let (case, upper) = if p > df / 2.0 + 1.0 / alpha {
        (LadderCase::Infinite, f64::INFINITY)
    } else if p <= 1.0 / alpha {
        if p <= df / 2.0 {
            (LadderCase::LowBoth, q_star(d, alpha, p))
        } else {
            (LadderCase::LowTime, p * (alpha * p + 1.0))
        }
    } else if p <= df / 2.0 {
        (LadderCase::LowSpace, p + 2.0 * p * p / df)
    } else {
        (LadderCase::Band, 2.0 * p)
    };
    let p1 = if case == LadderCase::Infinite {
        f64::INFINITY
    } else {
        // midpoint of the part of (p, upper) that clears the guaranteed increment
        let lo = p + min_increment(d, alpha);
        0.5 * (lo.min(upper) + upper)
    };
    LadderStep { p, case, interval: (p, upper), p1 }
}

/// Iterates [`ladder_step`] from `p_start` until `p₁ = ∞`.
pub fn exponent_ladder(d: usize, alpha: f64, p_start: f64) -> Result<LadderState> {
    if d == 0 || !(alpha > 0.0 && alpha < 1.0) || !(p_start > 1.0) || !p_start.is_finite() {
        return Err(Error::Argument(format!("ladder needs d ≥ 1, α ∈ (0,1), p ∈ (1,∞); got d={d}, α={alpha}, p={p_start}")));
    }
    let cap = ladder_step_bound(d, alpha, p_start) + 8;
    let mut steps = Vec::new();
    let mut p = p_start;
    loop {
        let s = ladder_step(d, alpha, p);
        steps.push(s);
        if s.p1.is_infinite() {
            return Ok(LadderState { d, alpha, p_start, steps, terminated: true });
        }
        if steps.len() > cap {
            return Ok(LadderState { d, alpha, p_start, steps, terminated: false });
        }
        p = s.p1;
    }
}

/// `⌈(d/2 + 1/α - p_start)/m⌉ + 1` with `m` the guaranteed increment.
pub fn ladder_step_bound(d: usize, alpha: f64, p_start: f64) -> usize {
    let gap = d as f64 / 2.0 + 1.0 / alpha - p_start;
    (gap.max(0.0) / min_increment(d, alpha)).ceil() as usize + 1
}
