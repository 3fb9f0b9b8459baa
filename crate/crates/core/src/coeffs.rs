//! Coefficient fields with controlled roughness, mean oscillation,
//! mollification and the time-cutoff commutator.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fraccore::{gamma_fn, FracOrder};
use crate::grids::{time_nodes_in, GridFunction, ParabolicCylinder, SpaceGrid, TimeGrid};
use crate::linalg::symmetric_eigenvalues;
use crate::rng::{self, purpose};

/// Sampled `a^{ij}(t,x)`, `b^i(t,x)`, `c(t,x)` with ellipticity constant `δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    /// `d²` components, row-major.
    pub a: GridFunction,
    pub b: GridFunction,
    pub c: GridFunction,
    pub delta: f64,
    /// `true` when `a`, `b`, `c` do not depend on `x`.
    pub time_only: bool,
}

impl CoefficientField {
    /// Constant coefficients `a = a0`, `b = 0`, `c = 0`.
    pub fn constant(time: TimeGrid, space: SpaceGrid, a0: &[f64], delta: f64) -> Result<Self> {
        let d = space.dim();
        if a0.len() != d * d {
            return Err(Error::Argument(format!("expected {} matrix entries, got {}", d * d, a0.len())));
        }
        let nodes = time.nodes() * space.num_nodes();
        let a = GridFunction::new(time, space, d * d, a0.repeat(nodes))?;
        let field = CoefficientField {
            a,
            b: GridFunction::zeros(time, space, d),
            c: GridFunction::zeros(time, space, 1),
            delta,
            time_only: true,
        };
        field.validate()?;
        Ok(field)
    }

    pub fn dim(&self) -> usize {
        self.a.space.dim()
    }

    pub fn time(&self) -> TimeGrid {
        self.a.time
    }

    pub fn space(&self) -> SpaceGrid {
        self.a.space
    }

    /// `a(t_k, x_s)` as a row-major `d × d` slice.
    pub fn a_at(&self, k: usize, s: usize) -> &[f64] {
        let dd = self.a.components;
        &self.a.time_slice(k)[s * dd..(s + 1) * dd]
    }

    pub fn b_at(&self, k: usize, s: usize) -> &[f64] {
        let d = self.b.components;
        &self.b.time_slice(k)[s * d..(s + 1) * d]
    }

    pub fn c_at(&self, k: usize, s: usize) -> f64 {
        self.c.get(k, s, 0)
    }

    /// Minimum eigenvalue of `a` over all nodes.
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim();
        let m = self.space().num_nodes();
        (0..self.time().nodes())
            .into_par_iter()
            .map(|k| {
                let slab = if self.time_only { 1 } else { m };
                (0..slab).map(|s| symmetric_eigenvalues(self.a_at(k, s), d)[0]).fold(f64::INFINITY, f64::min)
            })
            .reduce(|| f64::INFINITY, f64::min)
    }

    /// Checks symmetry, `ξᵀaξ ≥ δ|ξ|²`, `|a^{ij}|, |b^i|, |c| ≤ δ^{-1}`.
    pub fn validate(&self) -> Result<()> {
        let delta = self.delta;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Domain(format!("ellipticity constant must lie in (0,1), got {delta}")));
        }
        let d = self.dim();
        let bound = 1.0 / delta + 1e-12;
        for (k, row) in self.a.values().chunks(d * d).enumerate() {
            for i in 0..d {
                for j in 0..d {
                    if (row[i * d + j] - row[j * d + i]).abs() > 1e-12 * bound {
                        return Err(Error::Ellipticity(format!("a is not symmetric at node {k}")));
                    }
                    if row[i * d + j].abs() > bound {
                        return Err(Error::Ellipticity(format!("|a^{i}{j}| = {} exceeds 1/δ at node {k}", row[i * d + j])));
                    }
                }
            }
        }
        if let Some(v) = self.b.values().iter().chain(self.c.values()).find(|v| v.abs() > bound) {
            return Err(Error::Ellipticity(format!("lower-order coefficient {v} exceeds 1/δ")));
        }
        let lam = self.min_eigenvalue();
        if lam < delta - 1e-12 {
            return Err(Error::Ellipticity(format!("minimum eigenvalue {lam} is below δ = {delta}")));
        }
        Ok(())
    }

    /// Adds random `x`-independent lower-order terms with `|b^i|, |c| ≤ scale/δ`.
    pub fn with_random_lower_order(mut self, seed: u64, scale: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&scale) {
            return Err(Error::Argument(format!("lower-order scale must lie in [0,1], got {scale}")));
        }
        let mut rng = rng::stream(seed, purpose::RHS + 100);
        let d = self.dim();
        let m = self.space().num_nodes();
        let lim = scale / self.delta;
        let bvec: Vec<f64> = (0..d).map(|_| rng.gen_range(-lim..=lim)).collect();
        let cval = rng.gen_range(-lim..=lim);
        for k in 0..self.time().nodes() {
            for s in 0..m {
                for (i, bv) in bvec.iter().enumerate() {
                    self.b.set(k, s, i, *bv);
                }
                self.c.set(k, s, 0, cval);
            }
        }
        self.validate()?;
        Ok(self)
    }

    /// Coefficients on time nodes `k0..=k1`.
    pub fn time_window(&self, k0: usize, k1: usize) -> Result<Self> {
        Ok(CoefficientField {
            a: self.a.time_window(k0, k1)?,
            b: self.b.time_window(k0, k1)?,
            c: self.c.time_window(k0, k1)?,
            delta: self.delta,
            time_only: self.time_only,
        })
    }

    /// `a^{ij}` component as a scalar grid function.
    pub fn a_component(&self, i: usize, j: usize) -> GridFunction {
        let d = self.dim();
        let vals = self.a.values().chunks(d * d).map(|r| r[i * d + j]).collect();
        GridFunction::new(self.time(), self.space(), 1, vals).expect("component layout")
    }
}

/// Random `d × d` rotation by Gram–Schmidt on Gaussian columns.
fn random_rotation(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut ok = true;
        for _ in 0..d {
            let mut v: Vec<f64> = (0..d).map(|_| rng::normal(rng)).collect();
            for u in &q {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= p * ui;
                }
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < 1e-8 {
                ok = false;
                break;
            }
            q.push(v.into_iter().map(|x| x / n).collect());
        }
        if ok {
            let mut out = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] = q[j][i];
                }
            }
            return out;
        }
    }
}

/// `Q diag(λ) Qᵀ` with eigenvalues uniform in `[lo, hi]`.
fn random_elliptic_matrix(rng: &mut impl Rng, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    let q = random_rotation(rng, d);
    let lam: Vec<f64> = (0..d).map(|_| rng.gen_range(lo..=hi)).collect();
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = (0..d).map(|k| q[i * d + k] * lam[k] * q[j * d + k]).sum();
        }
    }
    // exact symmetry
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (a[i * d + j] + a[j * d + i]);
            a[i * d + j] = s;
            a[j * d + i] = s;
        }
    }
    a
}

/// Switch times uniform on `(t_0, T)`; node `k` uses piece `#{switch < t_k}`.
fn piecewise_matrices(seed: u64, time: TimeGrid, d: usize, n_switches: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, purpose::COEFF_TIME);
    let mut switches: Vec<f64> = (0..n_switches).map(|_| rng.gen_range(time.t0..time.t_end())).collect();
    switches.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pieces: Vec<Vec<f64>> = (0..=n_switches).map(|_| random_elliptic_matrix(&mut rng, d, lo, hi)).collect();
    (0..time.nodes())
        .map(|k| {
            let t = time.time(k);
            // the value on (t_{k-1}, t_k] is the one at the cell midpoint
            let probe = if k == 0 { t } else { t - 0.5 * time.h };
            pieces[switches.partition_point(|&s| s < probe)].clone()
        })
        .collect()
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("ellipticity constant must lie in (0,1), got {delta}")));
    }
    Ok(())
}

/// Piecewise-constant-in-time, `x`-independent symmetric coefficients with
/// eigenvalues in `[δ, δ^{-1}]`; `b = 0`, `c = 0`.
pub fn gen_rough_time(seed: u64, delta: f64, n_switches: usize, time: TimeGrid, space: SpaceGrid) -> Result<CoefficientField> {
    check_delta(delta)?;
    if n_switches == 0 {
        return Err(Error::Argument("n_switches must be at least 1".into()));
    }
    let d = space.dim();
    let per_time = piecewise_matrices(seed, time, d, n_switches, delta, 1.0 / delta);
    let m = space.num_nodes();
    let mut vals = Vec::with_capacity(time.nodes() * m * d * d);
    for a in &per_time {
        for _ in 0..m {
            vals.extend_from_slice(a);
        }
    }
    let field = CoefficientField {
        a: GridFunction::new(time, space, d * d, vals)?,
        b: GridFunction::zeros(time, space, d),
        c: GridFunction::zeros(time, space, 1),
        delta,
        time_only: true,
    };
    field.validate()?;
    Ok(field)
}

/// Spatial profile `φ` with `max |φ| = 1` used for the BMO perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BmoProfile {
    /// Random low-frequency trigonometric sum.
    Smooth { modes: usize },
    /// `±1` on alternating blocks of `period_cells / 2` cells along axis 0.
    Checkerboard { period_cells: usize },
}

fn profile_values(profile: BmoProfile, seed: u64, space: &SpaceGrid) -> Result<Vec<f64>> {
    let m = space.num_nodes();
    let d = space.dim();
    let l = space.box_length();
    let raw: Vec<f64> = match profile {
        BmoProfile::Checkerboard { period_cells } => {
            if period_cells < 2 || period_cells % 2 == 1 {
                return Err(Error::Argument(format!("checkerboard period must be even and ≥ 2, got {period_cells}")));
            }
            (0..m)
                .map(|s| if (space.multi_index(s)[0] / (period_cells / 2)) % 2 == 0 { 1.0 } else { -1.0 })
                .collect()
        }
        BmoProfile::Smooth { modes } => {
            let mut rng = rng::stream(seed, purpose::COEFF_SPACE);
            let waves: Vec<([f64; 3], f64, f64)> = (0..modes.max(1))
                .map(|_| {
                    let mut k = [0.0; 3];
                    for ka in k.iter_mut().take(d) {
                        *ka = rng.gen_range(-3i32..=3) as f64;
                    }
                    if k.iter().all(|&v| v == 0.0) {
                        k[0] = 1.0;
                    }
                    (k, rng.gen_range(0.0..std::f64::consts::TAU), rng::normal(&mut rng))
                })
                .collect();
            (0..m)
                .map(|s| {
                    let x = space.coords(s);
                    waves
                        .iter()
                        .map(|(k, ph, c)| {
                            let arg: f64 = (0..d).map(|a| k[a] * x[a]).sum::<f64>() * std::f64::consts::TAU / l;
                            c * (arg + ph).cos()
                        })
                        .sum()
                })
                .collect()
        }
    };
    let mx = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if mx == 0.0 {
        return Ok(raw);
    }
    Ok(raw.into_iter().map(|v| v / mx).collect())
}

/// Parameters of the small-BMO generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmoSpec {
    pub delta: f64,
    pub gamma0: f64,
    pub r0: f64,
    pub n_switches: usize,
    pub profile: BmoProfile,
    /// Starting amplitude as a fraction of the largest amplitude that keeps
    /// ellipticity.
    pub amplitude: f64,
}

impl BmoSpec {
    pub fn new(delta: f64, gamma0: f64, r0: f64) -> Self {
        BmoSpec { delta, gamma0, r0, n_switches: 4, profile: BmoProfile::Smooth { modes: 6 }, amplitude: 1.0 }
    }
}

/// Rough-in-time base plus `A φ(x) I`; `A` is halved until the measured mean
/// oscillation over radii `≤ R0` is at most `γ0`.
pub fn gen_bmo_space(seed: u64, spec: &BmoSpec, alpha: FracOrder, time: TimeGrid, space: SpaceGrid) -> Result<CoefficientField> {
    let BmoSpec { delta, gamma0, r0, n_switches, profile, amplitude } = *spec;
    check_delta(delta)?;
    if !(gamma0 > 0.0 && gamma0 < 1.0) {
        return Err(Error::Argument(format!("γ0 must lie in (0,1), got {gamma0}")));
    }
    if !(r0 > 0.0 && r0 <= 1.0) {
        return Err(Error::Argument(format!("R0 must lie in (0,1], got {r0}")));
    }
    if !(0.0..=1.0).contains(&amplitude) {
        return Err(Error::Argument(format!("amplitude fraction must lie in [0,1], got {amplitude}")));
    }
    let d = space.dim();
    let a_max = (1.0 / delta - delta) / 4.0;
    let base = piecewise_matrices(seed, time, d, n_switches.max(1), delta + a_max, 1.0 / delta - a_max);
    let phi = profile_values(profile, seed, &space)?;
    let m = space.num_nodes();
    let build = |amp: f64| -> Result<CoefficientField> {
        let mut vals = Vec::with_capacity(time.nodes() * m * d * d);
        for a in &base {
            for ph in &phi {
                let mut row = a.clone();
                for i in 0..d {
                    row[i * d + i] += amp * ph;
                }
                vals.extend_from_slice(&row);
            }
        }
        Ok(CoefficientField {
            a: GridFunction::new(time, space, d * d, vals)?,
            b: GridFunction::zeros(time, space, d),
            c: GridFunction::zeros(time, space, 1),
            delta,
            time_only: amp == 0.0,
        })
    };
    let mut amp = amplitude * a_max;
    for _ in 0..=40 {
        let field = build(amp)?;
        let report = oscillation_sup(&field.a, r0, alpha)?;
        if report.gamma_measured <= gamma0 {
            field.validate()?;
            return Ok(field);
        }
        amp *= 0.5;
    }
    Err(Error::Generation(format!("oscillation stayed above γ0 = {gamma0} after 40 halvings")))
}

/// Measured mean oscillation over a family of cylinders.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillationReport {
    pub r0: f64,
    /// Lattice lower bound of the supremum.
    pub gamma_measured: f64,
    pub worst: Option<ParabolicCylinder>,
    pub cylinders_examined: usize,
}

/// `Σ |v_i - mean(v)|`, computed around the first value so that constant
/// data gives exactly zero.
fn abs_deviation_sum(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = vals.clone();
    let Some(v0) = it.next() else { return 0.0 };
    let n = vals.clone().count() as f64;
    let shift = vals.clone().map(|v| v - v0).sum::<f64>() / n;
    vals.map(|v| (v - v0 - shift).abs()).sum()
}

/// `max_{ij} ⨍_Q |a^{ij} - ā^{ij}(t)|` with `ā(t)` the spatial average over
/// the ball at each time slice. Works for any number of components.
pub fn mean_oscillation(a: &GridFunction, cyl: &ParabolicCylinder) -> Result<f64> {
    let (lo, hi) = cyl.time_interval();
    let ks: Vec<usize> = time_nodes_in(&a.time, lo, hi).filter(|&k| k >= 1).collect();
    let ball = a.space.ball_nodes(&cyl.x, cyl.r2);
    if ks.is_empty() || ball.is_empty() {
        return Err(Error::MeasureZero("cylinder contains no lattice node".into()));
    }
    let nc = a.components;
    let mut best = 0.0f64;
    for c in 0..nc {
        let mut total = 0.0;
        for &k in &ks {
            let slice = a.time_slice(k);
            total += abs_deviation_sum(ball.iter().map(|&s| slice[s * nc + c]));
        }
        best = best.max(total / (ks.len() * ball.len()) as f64);
    }
    Ok(best)
}

/// Radii `R0, R0/2, …` down to 4 spacings (always including `R0`).
pub fn dyadic_radii_down(r0: f64, spacing: f64) -> Vec<f64> {
    let mut out = vec![r0];
    let mut r = r0 / 2.0;
    while r >= 4.0 * spacing {
        out.push(r);
        r /= 2.0;
    }
    out
}

/// Per-slice oscillation sums `S_k(s) = Σ_{y ∈ B_r(x_s)} |a_k(y) - ā_k|`
/// for one component; returns `(S, |B|)`.
fn slice_oscillation(a: &GridFunction, comp: usize, offsets: &[[isize; 3]]) -> Vec<f64> {
    let sp = a.space;
    let m = sp.num_nodes();
    let nc = a.components;
    let nbr: Vec<Vec<usize>> = (0..m).map(|s| offsets.iter().map(|o| sp.shift_multi(s, o)).collect()).collect();
    let mut out = vec![0.0; a.time.nodes() * m];
    out.par_chunks_mut(m).enumerate().for_each(|(k, row)| {
        let slice = a.time_slice(k);
        for s in 0..m {
            row[s] = abs_deviation_sum(nbr[s].iter().map(|&y| slice[y * nc + comp]));
        }
    });
    out
}

/// Lattice supremum of the mean oscillation over backward cylinders
/// `Q_r(t_k, x_s)`, `r` dyadic in `[4Δ, R0]`, all nodes as centers.
pub fn oscillation_sup(a: &GridFunction, r0: f64, alpha: FracOrder) -> Result<OscillationReport> {
    let sp = a.space;
    let time = a.time;
    let m = sp.num_nodes();
    let mut best = 0.0f64;
    let mut worst = None;
    let mut examined = 0;
    for r in dyadic_radii_down(r0, sp.spacing()) {
        let offsets = sp.ball_offsets(r);
        let nb = offsets.len();
        let tau = r.powf(2.0 / alpha.value());
        for comp in 0..a.components {
            let sums = slice_oscillation(a, comp, &offsets);
            // prefix over k ≥ 1
            let mut prefix = vec![0.0; (time.nodes() + 1) * m];
            for k in 1..time.nodes() {
                for s in 0..m {
                    prefix[(k + 1) * m + s] = prefix[k * m + s] + sums[k * m + s];
                }
            }
            for k in 1..time.nodes() {
                let range = time_nodes_in(&time, time.time(k) - tau, time.time(k));
                let first = range.start.max(1);
                let count = k + 1 - first;
                if count == 0 {
                    continue;
                }
                for s in 0..m {
                    examined += 1;
                    let v = (prefix[(k + 1) * m + s] - prefix[first * m + s]) / (count * nb) as f64;
                    if v > best {
                        best = v;
                        let x = sp.coords(s)[..sp.dim()].to_vec();
                        worst = Some(ParabolicCylinder::square(time.time(k), x, r, alpha)?);
                    }
                }
            }
        }
    }
    Ok(OscillationReport { r0, gamma_measured: best, worst, cylinders_examined: examined })
}

/// Outcome of the long-interval chaining check.
#[derive(Debug, Clone, PartialEq)]
pub struct DoublingReport {
    /// `⨍_{(a,b) × B_{R0}} |a - ā(t)|`, maximised over components.
    pub long_interval: f64,
    /// Largest oscillation over the chained blocks of length `R0^{2/α}`.
    pub gamma_blocks: f64,
    pub blocks: usize,
    pub pass: bool,
}

/// Integral of a piecewise-constant cell function over `(lo, hi)`.
/// `cell[k-1]` is the value on `(t_{k-1}, t_k]`; before `t_0` the first
/// cell's value is used.
fn integrate_cells(cell: &[f64], t0: f64, h: f64, lo: f64, hi: f64) -> f64 {
    let mut total = 0.0;
    if lo < t0 {
        total += cell[0] * (hi.min(t0) - lo);
    }
    let a = lo.max(t0);
    if hi <= a {
        return total;
    }
    let first = ((a - t0) / h).floor() as usize;
    let last = (((hi - t0) / h).ceil() as usize).min(cell.len());
    for (j, v) in cell.iter().enumerate().take(last).skip(first) {
        let c_lo = t0 + j as f64 * h;
        let c_hi = c_lo + h;
        let overlap = hi.min(c_hi) - a.max(c_lo);
        if overlap > 0.0 {
            total += v * overlap;
        }
    }
    total
}

/// Chains blocks `(b - (j+1)τ, b - jτ]`, `τ = R0^{2/α}`, to bound the mean
/// oscillation over a long interval `(a, b)` by twice the block maximum.
pub fn doubling_check(a: &GridFunction, x0: &[f64], interval: (f64, f64), r0: f64, alpha: FracOrder) -> Result<DoublingReport> {
    let (ta, tb) = interval;
    let tau = r0.powf(2.0 / alpha.value());
    if !(tb - ta > tau) {
        return Err(Error::Precondition(format!("interval length {} must exceed R0^(2/α) = {tau}", tb - ta)));
    }
    if tb > a.time.t_end() + 1e-12 {
        return Err(Error::Argument("interval extends past the time grid".into()));
    }
    let ball = a.space.ball_nodes(x0, r0);
    if ball.is_empty() {
        return Err(Error::MeasureZero("ball contains no lattice node".into()));
    }
    let nc = a.components;
    let n = a.time.n;
    let k_blocks = ((tb - ta) / tau).floor() as usize;
    let mut long = 0.0f64;
    let mut gamma = 0.0f64;
    for c in 0..nc {
        let cell: Vec<f64> = (1..=n)
            .map(|k| {
                let slice = a.time_slice(k);
                abs_deviation_sum(ball.iter().map(|&s| slice[s * nc + c])) / ball.len() as f64
            })
            .collect();
        long = long.max(integrate_cells(&cell, a.time.t0, a.time.h, ta, tb) / (tb - ta));
        for j in 0..=k_blocks {
            let hi = tb - j as f64 * tau;
            let g = integrate_cells(&cell, a.time.t0, a.time.h, hi - tau, hi) / tau;
            gamma = gamma.max(g);
        }
    }
    let pass = long <= 2.0 * gamma + 1e-12 * gamma.max(1.0);
    Ok(DoublingReport { long_interval: long, gamma_blocks: gamma, blocks: k_blocks + 1, pass })
}

fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - s * s).powi(4)
    }
}

/// Discrete mollifier: time lags and spatial offsets with weights of unit sum.
#[derive(Debug, Clone)]
pub struct Mollifier {
    /// `(lag, offset, weight)`.
    pub taps: Vec<(usize, [isize; 3], f64)>,
}

impl Mollifier {
    pub fn new(eps: f64, alpha: FracOrder, time: &TimeGrid, space: &SpaceGrid) -> Result<Self> {
        let tau = eps.powf(2.0 / alpha.value());
        let dx = space.spacing();
        if eps < 2.0 * dx || tau < 2.0 * time.h {
            return Err(Error::Argument(format!(
                "ε = {eps} is below resolution (need ε ≥ 2Δx = {} and ε^(2/α) ≥ 2h = {})",
                2.0 * dx,
                2.0 * time.h
            )));
        }
        let offsets = space.ball_offsets(eps);
        let mut taps = Vec::new();
        let mut lag = 1;
        while (lag as f64) * time.h < tau {
            let wt = bump(2.0 * lag as f64 * time.h / tau - 1.0);
            for off in &offsets {
                let r = (0..space.dim()).map(|a| (off[a] as f64 * dx).powi(2)).sum::<f64>().sqrt();
                let w = wt * bump(r / eps);
                if w > 0.0 {
                    taps.push((lag, *off, w));
                }
            }
            lag += 1;
        }
        let total: f64 = taps.iter().map(|t| t.2).sum();
        if taps.is_empty() || total <= 0.0 {
            return Err(Error::Argument("mollifier has no support on the lattice".into()));
        }
        for t in taps.iter_mut() {
            t.2 /= total;
        }
        Ok(Mollifier { taps })
    }
}

/// `u^{(ε)}(t,x) = Σ η_ε(t-s, x-y) u(s,y)`, one-sided in time, periodic in
/// space, with `u = 0` before the first node.
pub fn mollify(u: &GridFunction, eps: f64, alpha: FracOrder) -> Result<GridFunction> {
    let kernel = Mollifier::new(eps, alpha, &u.time, &u.space)?;
    let sp = u.space;
    let m = sp.num_nodes();
    let nc = u.components;
    let shifted: Vec<([isize; 3], Vec<usize>)> = {
        let mut offs: Vec<[isize; 3]> = kernel.taps.iter().map(|t| t.1).collect();
        offs.sort();
        offs.dedup();
        offs.into_iter().map(|o| (o, (0..m).map(|s| sp.shift_multi(s, &[-o[0], -o[1], -o[2]])).collect())).collect()
    };
    let table = |o: &[isize; 3]| -> &Vec<usize> { &shifted[shifted.binary_search_by(|e| e.0.cmp(o)).unwrap()].1 };
    let mut out = vec![0.0; u.values().len()];
    out.par_chunks_mut(m * nc).enumerate().for_each(|(k, row)| {
        for (lag, off, w) in &kernel.taps {
            if *lag > k {
                continue;
            }
            let src = u.time_slice(k - lag);
            let idx = table(off);
            for s in 0..m {
                for c in 0..nc {
                    row[s * nc + c] += w * src[idx[s] * nc + c];
                }
            }
        }
    });
    Ok(u.with_values(out))
}

/// Commutator `g` and the residual of `∂_t^α(ηv) = η D_t^α v - g`.
#[derive(Debug, Clone)]
pub struct CommutatorReport {
    pub g: GridFunction,
    /// Max node residual of the identity over nodes with `t > t_cut + 2h`.
    pub residual: f64,
}

/// `g(t) = α/Γ(1-α) ∫_S^t (t-s)^{-α-1}(η(s)-η(t)) v(s) ds` by product
/// integration of the linear interpolant of `(η(s)-η(t)) v(s)`. `v` is zero
/// on `[S, t_0)`; `eta[k]` is `η(t_k)`.
pub fn time_cutoff_commutator(v: &GridFunction, eta: &[f64], t_cut: f64, alpha: FracOrder, origin: f64) -> Result<CommutatorReport> {
    let time = v.time;
    if eta.len() != time.nodes() {
        return Err(Error::Argument(format!("η needs {} samples, got {}", time.nodes(), eta.len())));
    }
    if origin > t_cut + 1e-12 || t_cut >= time.t_end() {
        return Err(Error::Argument(format!("need S ≤ t0 < T, got S = {origin}, t0 = {t_cut}")));
    }
    if let Some(k) = (0..time.nodes()).find(|&k| time.time(k) <= t_cut + 1e-12 * time.h && eta[k] != 0.0) {
        return Err(Error::Argument(format!("η is nonzero at t = {} ≤ t0", time.time(k))));
    }
    if origin > time.t0 + 1e-12 {
        return Err(Error::Argument("origin after the first node".into()));
    }
    // nodes before t_0 carry v = 0 and η = 0, so they contribute nothing
    let a = alpha.value();
    let n = time.n;
    let w = v.slab();
    let h = time.h;
    let pj: Vec<f64> = (0..n).map(|j| if j == 0 { 0.0 } else { ((j as f64).powf(-a) - ((j + 1) as f64).powf(-a)) / a }).collect();
    let aj: Vec<f64> = (0..n)
        .map(|j| {
            if j == 0 {
                1.0 / (1.0 - a)
            } else {
                let jf = j as f64;
                let diff = jf.powf(1.0 - a) * ((1.0 - a) * (1.0 / jf).ln_1p()).exp_m1();
                diff / (1.0 - a) - jf * pj[j]
            }
        })
        .collect();
    let bj: Vec<f64> = (0..n).map(|j| if j == 0 { 0.0 } else { pj[j] - aj[j] }).collect();
    let pref = a / gamma_fn(1.0 - a)? * h.powf(-a);
    let vals = v.values();
    let mut g = vec![0.0; vals.len()];
    g.par_chunks_mut(w).enumerate().skip(1).for_each(|(nn, row)| {
        for k in 0..nn {
            let j = nn - 1 - k;
            let fk = eta[k] - eta[nn];
            let fk1 = eta[k + 1] - eta[nn];
            let vk = &vals[k * w..(k + 1) * w];
            let vk1 = &vals[(k + 1) * w..(k + 2) * w];
            for c in 0..w {
                row[c] += fk * vk[c] * aj[j] + fk1 * vk1[c] * bj[j];
            }
        }
        for x in row.iter_mut() {
            *x *= pref;
        }
    });
    let g = v.with_values(g);
    // identity check
    let eta_v = v.with_values(vals.iter().enumerate().map(|(i, x)| eta[i / w] * x).collect());
    let lhs = eta_v.caputo(alpha)?;
    let dv = v.rl_derivative(alpha, origin)?;
    let mut residual = 0.0f64;
    for k in 0..time.nodes() {
        if time.time(k) <= t_cut + 2.0 * h {
            continue;
        }
        for c in 0..w {
            let i = k * w + c;
            residual = residual.max((lhs.values()[i] - (eta[k] * dv.values()[i] - g.values()[i])).abs());
        }
    }
    Ok(CommutatorReport { g, residual })
}
