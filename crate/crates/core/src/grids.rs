//! Periodic space-time lattices, grid functions, finite differences, norms
//! and parabolic-cylinder geometry.
//!
//! Measure convention: every node with time index `k ≥ 1` owns the half-open
//! cell `(t_{k-1}, t_k] × [x - Δ/2, x + Δ/2)^d`. A set is measured by counting
//! the nodes it contains and multiplying by the cell volume. The initial node
//! `t_0` owns no cell of `(t_0, T)` and is excluded from norms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fraccore::{self, FracOrder, TimeSeries};

/// Uniform periodic grid on `[0, L)^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    dim: usize,
    box_length: f64,
    cells: usize,
}

impl SpaceGrid {
    pub fn new(dim: usize, box_length: f64, cells: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Argument(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if cells < 4 {
            return Err(Error::Argument(format!("need at least 4 cells per axis, got {cells}")));
        }
        if !(box_length > 0.0) || !box_length.is_finite() {
            return Err(Error::Argument(format!("box length must be positive, got {box_length}")));
        }
        Ok(SpaceGrid { dim, box_length, cells })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn periodic(&self) -> bool {
        true
    }

    pub fn spacing(&self) -> f64 {
        self.box_length / self.cells as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Multi-index of a flat node index (axis 0 varies fastest).
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let m = self.cells;
        let mut out = [0; 3];
        let mut r = idx;
        for o in out.iter_mut().take(self.dim) {
            *o = r % m;
            r /= m;
        }
        out
    }

    pub fn flat_index(&self, multi: [usize; 3]) -> usize {
        let m = self.cells;
        (0..self.dim).rev().fold(0, |acc, a| acc * m + multi[a] % m)
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let mi = self.multi_index(idx);
        let dx = self.spacing();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = mi[a] as f64 * dx;
        }
        x
    }

    /// Node shifted by `offset` cells along `axis`, wrapping periodically.
    pub fn shift(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let mut mi = self.multi_index(idx);
        let m = self.cells as isize;
        mi[axis] = ((mi[axis] as isize + offset).rem_euclid(m)) as usize;
        self.flat_index(mi)
    }

    /// Minimum-image Euclidean distance on the torus.
    pub fn periodic_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let l = self.box_length;
        (0..self.dim)
            .map(|i| {
                let mut d = (a[i] - b[i]).rem_euclid(l);
                if d > 0.5 * l {
                    d = l - d;
                }
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Nodes with periodic distance `< radius` from `center`.
    pub fn ball_nodes(&self, center: &[f64], radius: f64) -> Vec<usize> {
        if radius >= 0.5 * self.box_length {
            log::warn!(
                "ball radius {radius} ≥ L/2 = {}: periodic wrap-around is active",
                0.5 * self.box_length
            );
        }
        (0..self.num_nodes())
            .filter(|&i| self.periodic_distance(&self.coords(i), center) < radius)
            .collect()
    }

    /// Offsets (in cells) of all nodes within `radius` of a node, as flat-index
    /// independent multi-offsets. Used for sliding-ball reductions.
    pub fn ball_offsets(&self, radius: f64) -> Vec<[isize; 3]> {
        let dx = self.spacing();
        let reach = ((radius / dx).ceil() as isize).min(self.cells as isize / 2);
        let mut out = Vec::new();
        let range = |a: usize| if a < self.dim { -reach..=reach } else { 0..=0 };
        let origin = [0.0; 3];
        let mut seen = std::collections::BTreeSet::new();
        for i in range(0) {
            for j in range(1) {
                for k in range(2) {
                    let off = [i, j, k];
                    let mut p = [0.0; 3];
                    for a in 0..self.dim {
                        p[a] = off[a] as f64 * dx;
                    }
                    if self.periodic_distance(&p, &origin) < radius {
                        // distinct lattice points only (offsets may alias when reach = m/2)
                        let mut canon = [0usize; 3];
                        for a in 0..self.dim {
                            canon[a] = off[a].rem_euclid(self.cells as isize) as usize;
                        }
                        if seen.insert(canon) {
                            out.push(off);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn shift_multi(&self, idx: usize, off: &[isize; 3]) -> usize {
        let mut mi = self.multi_index(idx);
        let m = self.cells as isize;
        for a in 0..self.dim {
            mi[a] = ((mi[a] as isize + off[a]).rem_euclid(m)) as usize;
        }
        self.flat_index(mi)
    }
}

/// Uniform time grid `t_k = t0 + k h`, `k = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub h: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, h: f64, n: usize) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Argument(format!("time step must be positive, got {h}")));
        }
        if n < 1 {
            return Err(Error::Argument("time grid needs at least one step".into()));
        }
        Ok(TimeGrid { t0, h, n })
    }

    /// `n` steps covering `[0, T]`.
    pub fn uniform(t_end: f64, n: usize) -> Result<Self> {
        Self::new(0.0, t_end / n as f64, n)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n)
    }

    pub fn nodes(&self) -> usize {
        self.n + 1
    }
}

/// Values of a scalar, vector or matrix field on a time × space lattice.
///
/// Layout is node-major: `values[((k * M) + s) * components + c]` with `M`
/// the number of spatial nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub time: TimeGrid,
    pub space: SpaceGrid,
    pub components: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(time: TimeGrid, space: SpaceGrid, components: usize, values: Vec<f64>) -> Result<Self> {
        let expected = time.nodes() * space.num_nodes() * components;
        if components == 0 || values.len() != expected {
            return Err(Error::Argument(format!(
                "expected {expected} values for {} nodes × {} points × {components} components, got {}",
                time.nodes(),
                space.num_nodes(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite value at flat index {bad}")));
        }
        Ok(GridFunction { time, space, components, values })
    }

    pub fn zeros(time: TimeGrid, space: SpaceGrid, components: usize) -> Self {
        let len = time.nodes() * space.num_nodes() * components;
        GridFunction { time, space, components, values: vec![0.0; len] }
    }

    /// Scalar field sampled from `f(t, x)`.
    pub fn from_fn(time: TimeGrid, space: SpaceGrid, f: impl Fn(f64, &[f64]) -> f64 + Sync) -> Self {
        let m = space.num_nodes();
        let mut values = vec![0.0; time.nodes() * m];
        values.par_chunks_mut(m).enumerate().for_each(|(k, row)| {
            let t = time.time(k);
            for (s, v) in row.iter_mut().enumerate() {
                *v = f(t, &space.coords(s)[..space.dim()]);
            }
        });
        GridFunction { time, space, components: 1, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Values per time node.
    pub fn slab(&self) -> usize {
        self.space.num_nodes() * self.components
    }

    pub fn get(&self, k: usize, s: usize, c: usize) -> f64 {
        self.values[(k * self.space.num_nodes() + s) * self.components + c]
    }

    pub fn set(&mut self, k: usize, s: usize, c: usize, v: f64) {
        let m = self.space.num_nodes();
        self.values[(k * m + s) * self.components + c] = v;
    }

    pub fn time_slice(&self, k: usize) -> &[f64] {
        let w = self.slab();
        &self.values[k * w..(k + 1) * w]
    }

    pub fn time_slice_mut(&mut self, k: usize) -> &mut [f64] {
        let w = self.slab();
        &mut self.values[k * w..(k + 1) * w]
    }

    pub fn to_time_series(&self) -> TimeSeries {
        TimeSeries::new(self.time.t0, self.time.h, self.slab(), self.values.clone())
            .expect("grid function always has a valid layout")
    }

    pub fn with_values(&self, values: Vec<f64>) -> GridFunction {
        debug_assert_eq!(values.len(), self.values.len());
        GridFunction { time: self.time, space: self.space, components: self.components, values }
    }

    fn from_series(&self, ts: TimeSeries) -> GridFunction {
        self.with_values(ts.into_values())
    }

    /// Time nodes `k0..=k1` as a grid function on the sub-grid starting at `t_{k0}`.
    pub fn time_window(&self, k0: usize, k1: usize) -> Result<GridFunction> {
        if k0 >= k1 || k1 > self.time.n {
            return Err(Error::Argument(format!("invalid time window {k0}..={k1} of {} steps", self.time.n)));
        }
        let time = TimeGrid::new(self.time.time(k0), self.time.h, k1 - k0)?;
        let w = self.slab();
        GridFunction::new(time, self.space, self.components, self.values[k0 * w..(k1 + 1) * w].to_vec())
    }

    /// Prepends `pad` zero time slices, so the lattice starts at `t0 - pad h`.
    pub fn pad_past(&self, pad: usize) -> GridFunction {
        let time = TimeGrid { t0: self.time.t0 - pad as f64 * self.time.h, h: self.time.h, n: self.time.n + pad };
        let mut values = vec![0.0; pad * self.slab()];
        values.extend_from_slice(&self.values);
        GridFunction { time, space: self.space, components: self.components, values }
    }

    pub fn scale(&self, c: f64) -> GridFunction {
        self.with_values(self.values.iter().map(|v| c * v).collect())
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        self.with_values(self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        self.with_values(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise Euclidean (Frobenius for matrices) magnitude over components.
    pub fn magnitude(&self) -> GridFunction {
        let c = self.components;
        let values = self.values.chunks(c).map(|ch| ch.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        GridFunction { time: self.time, space: self.space, components: 1, values }
    }

    /// L1 Caputo derivative in time at every spatial node.
    pub fn caputo(&self, alpha: FracOrder) -> Result<GridFunction> {
        Ok(self.from_series(fraccore::caputo_derivative(&self.to_time_series(), alpha)?))
    }

    /// `I_S^β` in time at every spatial node.
    pub fn frac_integral(&self, order: FracOrder, origin: f64) -> Result<GridFunction> {
        Ok(self.from_series(fraccore::frac_integral(&self.to_time_series(), order, origin)?))
    }

    pub fn rl_derivative(&self, alpha: FracOrder, origin: f64) -> Result<GridFunction> {
        Ok(self.from_series(fraccore::rl_derivative(&self.to_time_series(), alpha, origin)?))
    }
}

/// Central finite differences on the periodic grid: `order = 1` gives the
/// gradient (`d` components per input component), `order = 2` the full
/// Hessian (`d²` components, `D_{ij}` at index `i d + j`).
pub fn finite_diff(u: &GridFunction, order: usize) -> Result<GridFunction> {
    let sp = u.space;
    let d = sp.dim();
    let dx = sp.spacing();
    let m = sp.num_nodes();
    let cin = u.components;
    let per = match order {
        1 => d,
        2 => d * d,
        _ => return Err(Error::Argument(format!("finite difference order must be 1 or 2, got {order}"))),
    };
    let cout = cin * per;
    let mut out = vec![0.0; u.time.nodes() * m * cout];
    // neighbour tables
    let plus: Vec<Vec<usize>> = (0..d).map(|a| (0..m).map(|s| sp.shift(s, a, 1)).collect()).collect();
    let minus: Vec<Vec<usize>> = (0..d).map(|a| (0..m).map(|s| sp.shift(s, a, -1)).collect()).collect();
    out.par_chunks_mut(m * cout).enumerate().for_each(|(k, row)| {
        let src = u.time_slice(k);
        let at = |s: usize, c: usize| src[s * cin + c];
        for s in 0..m {
            for c in 0..cin {
                let base = s * cout + c * per;
                if order == 1 {
                    for a in 0..d {
                        row[base + a] = (at(plus[a][s], c) - at(minus[a][s], c)) / (2.0 * dx);
                    }
                } else {
                    for i in 0..d {
                        row[base + i * d + i] =
                            (at(plus[i][s], c) - 2.0 * at(s, c) + at(minus[i][s], c)) / (dx * dx);
                        for j in (i + 1)..d {
                            let pp = at(plus[j][plus[i][s]], c);
                            let pm = at(minus[j][plus[i][s]], c);
                            let mp = at(plus[j][minus[i][s]], c);
                            let mm = at(minus[j][minus[i][s]], c);
                            let v = (pp - pm - mp + mm) / (4.0 * dx * dx);
                            row[base + i * d + j] = v;
                            row[base + j * d + i] = v;
                        }
                    }
                }
            }
        }
    });
    GridFunction::new(u.time, u.space, cout, out)
}

/// Which side of the center a cylinder extends to in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CylinderKind {
    /// `Q_{R1,R2}(t,x) = (t - R1^{2/α}, t] × B_{R2}(x)`.
    Backward,
    /// `C_R(t,x) = (t - R^{2/α}, t + R^{2/α}] × B_R(x)`.
    TwoSided,
}

/// Parabolic cylinder with time scale `R1^{2/α}` and spatial radius `R2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParabolicCylinder {
    pub t: f64,
    pub x: Vec<f64>,
    pub r1: f64,
    pub r2: f64,
    pub alpha: FracOrder,
    pub kind: CylinderKind,
}

impl ParabolicCylinder {
    pub fn new(t: f64, x: Vec<f64>, r1: f64, r2: f64, alpha: FracOrder) -> Result<Self> {
        if !(r1 > 0.0 && r2 > 0.0) {
            return Err(Error::Argument(format!("cylinder radii must be positive, got ({r1}, {r2})")));
        }
        Ok(ParabolicCylinder { t, x, r1, r2, alpha, kind: CylinderKind::Backward })
    }

    /// `Q_R(t,x)`.
    pub fn square(t: f64, x: Vec<f64>, r: f64, alpha: FracOrder) -> Result<Self> {
        Self::new(t, x, r, r, alpha)
    }

    /// `C_R(t,x)`.
    pub fn two_sided(t: f64, x: Vec<f64>, r: f64, alpha: FracOrder) -> Result<Self> {
        let mut c = Self::new(t, x, r, r, alpha)?;
        c.kind = CylinderKind::TwoSided;
        Ok(c)
    }

    /// `R1^{2/α}`.
    pub fn time_extent(&self) -> f64 {
        self.r1.powf(2.0 / self.alpha.value())
    }

    /// Half-open time interval `(lo, hi]` covered by the cylinder.
    pub fn time_interval(&self) -> (f64, f64) {
        let tau = self.time_extent();
        match self.kind {
            CylinderKind::Backward => (self.t - tau, self.t),
            CylinderKind::TwoSided => (self.t - tau, self.t + tau),
        }
    }

    /// Continuum measure `|time interval| · ω_d R2^d`.
    pub fn measure(&self, dim: usize) -> f64 {
        let (lo, hi) = self.time_interval();
        (hi - lo) * unit_ball_volume(dim) * self.r2.powi(dim as i32)
    }
}

pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 / 3.0 * std::f64::consts::PI,
        _ => f64::NAN,
    }
}

/// Time indices `k` of `time` with `lo < t_k ≤ hi`.
pub fn time_nodes_in(time: &TimeGrid, lo: f64, hi: f64) -> std::ops::Range<usize> {
    let eps = 1e-9 * time.h;
    let first = ((lo - time.t0 + eps) / time.h).floor() as i64 + 1;
    let last = ((hi - time.t0 + eps) / time.h).floor() as i64;
    let first = first.max(0) as usize;
    let last = last.min(time.n as i64);
    if last < first as i64 {
        0..0
    } else {
        first..(last as usize + 1)
    }
}

/// Flat node indices `k * M + s` of the lattice nodes inside the cylinder.
pub fn cylinder_nodes(c: &ParabolicCylinder, time: &TimeGrid, space: &SpaceGrid) -> Vec<usize> {
    let (lo, hi) = c.time_interval();
    let ks = time_nodes_in(time, lo, hi);
    if ks.is_empty() {
        return Vec::new();
    }
    let ball = space.ball_nodes(&c.x, c.r2);
    let m = space.num_nodes();
    ks.flat_map(|k| ball.iter().map(move |&s| k * m + s)).collect()
}

/// Region of the lattice a norm is taken over.
#[derive(Debug, Clone, PartialEq)]
pub enum NormDomain {
    /// All nodes with `k ≥ 1`.
    Full,
    /// `(t_lo, t_hi] × B_r(x)`.
    Slab { t_lo: f64, t_hi: f64, center: Vec<f64>, radius: f64 },
    Cylinder(ParabolicCylinder),
}

/// Quantity whose norm is taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    Value,
    Gradient,
    Hessian,
    Caputo(FracOrder),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormSpec {
    pub p: f64,
    pub domain: NormDomain,
    pub selector: Selector,
}

impl NormSpec {
    pub fn new(p: f64, domain: NormDomain, selector: Selector) -> Result<Self> {
        if !(p > 1.0) || p.is_nan() {
            return Err(Error::Argument(format!("norm exponent must satisfy p > 1 or p = ∞, got {p}")));
        }
        Ok(NormSpec { p, domain, selector })
    }

    pub fn full(p: f64) -> Result<Self> {
        Self::new(p, NormDomain::Full, Selector::Value)
    }
}

/// Applies a selector, returning the pointwise magnitude field.
pub fn select(u: &GridFunction, selector: Selector) -> Result<GridFunction> {
    let field = match selector {
        Selector::Value => u.clone(),
        Selector::Gradient => finite_diff(u, 1)?,
        Selector::Hessian => finite_diff(u, 2)?,
        Selector::Caputo(a) => u.caputo(a)?,
    };
    Ok(if field.components == 1 { field.map_abs() } else { field.magnitude() })
}

impl GridFunction {
    fn map_abs(&self) -> GridFunction {
        self.with_values(self.values.iter().map(|v| v.abs()).collect())
    }
}

/// Flat node indices of a norm domain (time index `≥ 1`).
pub fn domain_nodes(domain: &NormDomain, time: &TimeGrid, space: &SpaceGrid) -> Vec<usize> {
    let m = space.num_nodes();
    match domain {
        NormDomain::Full => (m..time.nodes() * m).collect(),
        NormDomain::Slab { t_lo, t_hi, center, radius } => {
            let ball = space.ball_nodes(center, *radius);
            time_nodes_in(time, *t_lo, *t_hi)
                .filter(|&k| k >= 1)
                .flat_map(|k| ball.iter().map(move |&s| k * m + s))
                .collect()
        }
        NormDomain::Cylinder(c) => cylinder_nodes(c, time, space).into_iter().filter(|&i| i >= m).collect(),
    }
}

/// Riemann-sum `L_p` norm of a nonnegative scalar field over node indices.
pub fn lp_of_nodes(values: &[f64], nodes: &[usize], p: f64, cell: f64) -> f64 {
    if p.is_infinite() {
        nodes.iter().fold(0.0, |m, &i| m.max(values[i].abs()))
    } else {
        let s: f64 = nodes.iter().map(|&i| values[i].abs().powf(p)).sum();
        (s * cell).powf(1.0 / p)
    }
}

/// `L_p` norm of the selected quantity over the requested domain.
pub fn lp_norm(u: &GridFunction, spec: &NormSpec) -> Result<f64> {
    let nodes = domain_nodes(&spec.domain, &u.time, &u.space);
    if nodes.is_empty() {
        return Err(Error::MeasureZero("norm domain contains no lattice node".into()));
    }
    let field = select(u, spec.selector)?;
    Ok(lp_of_nodes(field.values(), &nodes, spec.p, u.time.h * u.space.cell_volume()))
}

/// Order of iteration in a mixed norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixedOrder {
    /// `‖ ‖u(·, x)‖_{L_q(t)} ‖_{L_p(x)}`.
    SpaceOuter,
    /// `‖ ‖u(t, ·)‖_{L_q(x)} ‖_{L_p(t)}`.
    TimeOuter,
}

fn norm_1d(vals: impl Iterator<Item = f64>, p: f64, w: f64) -> f64 {
    if p.is_infinite() {
        vals.fold(0.0, |m, v| m.max(v.abs()))
    } else {
        (vals.map(|v| v.abs().powf(p)).sum::<f64>() * w).powf(1.0 / p)
    }
}

/// Iterated discrete norm of a scalar field over the full lattice (`k ≥ 1`).
pub fn mixed_norm(u: &GridFunction, p_outer: f64, q_inner: f64, order: MixedOrder) -> Result<f64> {
    for p in [p_outer, q_inner] {
        if !(p >= 1.0) {
            return Err(Error::Argument(format!("mixed norm exponents must be ≥ 1, got {p}")));
        }
    }
    if u.components != 1 {
        return Err(Error::Argument("mixed norm expects a scalar field".into()));
    }
    let m = u.space.num_nodes();
    let n = u.time.n;
    let h = u.time.h;
    let cv = u.space.cell_volume();
    let v = u.values();
    Ok(match order {
        MixedOrder::SpaceOuter => {
            let inner = (0..m).map(|s| norm_1d((1..=n).map(|k| v[k * m + s]), q_inner, h));
            norm_1d(inner, p_outer, cv)
        }
        MixedOrder::TimeOuter => {
            let inner = (1..=n).map(|k| norm_1d((0..m).map(|s| v[k * m + s]), q_inner, cv));
            norm_1d(inner, p_outer, h)
        }
    })
}

/// Number of node pairs above which the Hölder seminorm is sampled.
pub const HOLDER_EXHAUSTIVE_PAIRS: usize = 1_000_000;
pub const HOLDER_SAMPLED_PAIRS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct HolderReport {
    pub value: f64,
    pub pairs_examined: usize,
    pub exhaustive: bool,
}

/// `max |u(t,x) - u(s,y)| / (|t-s|^{σα/2} + |x-y|^σ)` over node pairs
/// (including `t_0`), periodic in `x`.
pub fn holder_seminorm(u: &GridFunction, sigma: f64, alpha: FracOrder, seed: u64) -> Result<HolderReport> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::Argument(format!("Hölder exponent must lie in (0,1), got {sigma}")));
    }
    if u.components != 1 {
        return Err(Error::Argument("Hölder seminorm expects a scalar field".into()));
    }
    let m = u.space.num_nodes();
    let total = u.time.nodes() * m;
    if total < 2 {
        return Err(Error::Argument("Hölder seminorm needs at least two nodes".into()));
    }
    let te = sigma * alpha.value() / 2.0;
    let coords: Vec<[f64; 3]> = (0..m).map(|s| u.space.coords(s)).collect();
    let v = u.values();
    let ratio = |i: usize, j: usize| -> f64 {
        if i == j {
            return 0.0;
        }
        let (ki, si) = (i / m, i % m);
        let (kj, sj) = (j / m, j % m);
        let dt = (ki as f64 - kj as f64).abs() * u.time.h;
        let dx = u.space.periodic_distance(&coords[si], &coords[sj]);
        let den = dt.powf(te) + dx.powf(sigma);
        (v[i] - v[j]).abs() / den
    };
    let pairs = total * (total - 1) / 2;
    if pairs <= HOLDER_EXHAUSTIVE_PAIRS {
        let value = (0..total)
            .into_par_iter()
            .map(|i| ((i + 1)..total).map(|j| ratio(i, j)).fold(0.0, f64::max))
            .reduce(|| 0.0, f64::max);
        return Ok(HolderReport { value, pairs_examined: pairs, exhaustive: true });
    }
    // stratified: every node gets the same number of random partners
    let per = HOLDER_SAMPLED_PAIRS.div_ceil(total);
    let value = (0..total)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (0..per).map(|_| ratio(i, rng.gen_range(0..total))).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(HolderReport { value, pairs_examined: per * total, exhaustive: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn grid1(m: usize, n: usize) -> (TimeGrid, SpaceGrid) {
        (TimeGrid::uniform(1.0, n).unwrap(), SpaceGrid::new(1, 1.0, m).unwrap())
    }

    #[test]
    fn space_grid_validation() {
        assert!(SpaceGrid::new(0, 1.0, 8).is_err());
        assert!(SpaceGrid::new(4, 1.0, 8).is_err());
        assert!(SpaceGrid::new(2, 1.0, 3).is_err());
        let g = SpaceGrid::new(3, 2.0, 8).unwrap();
        assert_eq!(g.num_nodes(), 512);
        for i in [0, 7, 63, 511] {
            assert_eq!(g.flat_index(g.multi_index(i)), i);
        }
    }

    #[test]
    fn finite_diff_of_constant_is_zero() {
        let (t, s) = grid1(16, 4);
        let u = GridFunction::from_fn(t, s, |_, _| 2.5);
        for order in [1, 2] {
            assert!(finite_diff(&u, order).unwrap().values().iter().all(|v| v.abs() < 1e-12));
        }
        assert!(finite_diff(&u, 3).is_err());
    }

    #[test]
    fn second_difference_converges_on_sine() {
        let mut errs = Vec::new();
        for m in [16, 32, 64] {
            let (t, s) = grid1(m, 1);
            let k = 2.0 * PI;
            let u = GridFunction::from_fn(t, s, |_, x| (k * x[0]).sin());
            let d2 = finite_diff(&u, 2).unwrap();
            let err = (0..m)
                .map(|i| (d2.get(1, i, 0) + k * k * (k * s.coords(i)[0]).sin()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.1, "order {order}");
        }
    }

    #[test]
    fn mixed_second_differences_are_symmetric() {
        let t = TimeGrid::uniform(1.0, 2).unwrap();
        let s = SpaceGrid::new(2, 1.0, 8).unwrap();
        let u = GridFunction::from_fn(t, s, |t, x| (3.1 * x[0] + 7.3 * x[1] * x[1] + t).sin() * (x[0] * 17.0).cos());
        let h = finite_diff(&u, 2).unwrap();
        for v in h.values().chunks(4) {
            assert_eq!(v[1], v[2]);
        }
    }

    #[test]
    fn lp_norm_unit_mass_and_sup() {
        let (t, s) = grid1(10, 10);
        let one = GridFunction::from_fn(t, s, |_, _| 1.0);
        assert_relative_eq!(lp_norm(&one, &NormSpec::full(2.0).unwrap()).unwrap(), 1.0, max_relative = 1e-14);
        let u = GridFunction::from_fn(t, s, |t, x| (t * 3.0 - x[0]).cos() * 4.0);
        let sup = lp_norm(&u, &NormSpec::full(f64::INFINITY).unwrap()).unwrap();
        let direct = u.values()[s.num_nodes()..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(sup, direct);
        assert!(NormSpec::full(1.0).is_err());
    }

    #[test]
    fn lp_norm_of_half_indicator() {
        let (t, s) = grid1(16, 16);
        let u = GridFunction::from_fn(t, s, |_, x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        let cells_on = 16.0 * 8.0;
        let exact = (cells_on / 256.0f64).sqrt();
        assert_relative_eq!(lp_norm(&u, &NormSpec::full(2.0).unwrap()).unwrap(), exact, max_relative = 1e-14);
        assert!((exact - 0.5f64.sqrt()).abs() <= 1.0 / 16.0);
    }

    #[test]
    fn empty_domain_is_an_error() {
        let (t, s) = grid1(16, 16);
        let a = FracOrder::new(0.5).unwrap();
        let cyl = ParabolicCylinder::square(0.5, vec![0.03], 0.01, a).unwrap();
        let spec = NormSpec::new(2.0, NormDomain::Cylinder(cyl), Selector::Value).unwrap();
        let u = GridFunction::zeros(t, s, 1);
        assert!(matches!(lp_norm(&u, &spec), Err(Error::MeasureZero(_))));
    }

    #[test]
    fn mixed_norm_separable_and_constant() {
        let (t, s) = grid1(16, 20);
        let one = GridFunction::from_fn(t, s, |_, _| 1.0);
        for ord in [MixedOrder::SpaceOuter, MixedOrder::TimeOuter] {
            assert_relative_eq!(mixed_norm(&one, 3.0, 2.0, ord).unwrap(), 1.0, max_relative = 1e-13);
        }
        let g = |t: f64| t * t + 0.5;
        let kx = |x: f64| (2.0 * PI * x).sin() + 2.0;
        let u = GridFunction::from_fn(t, s, |t, x| g(t) * kx(x[0]));
        let (p, q) = (3.0, 2.0);
        let gq = norm_1d((1..=20).map(|k| g(t.time(k))), q, t.h);
        let kp = norm_1d((0..16).map(|i| kx(s.coords(i)[0])), p, s.cell_volume());
        assert_relative_eq!(mixed_norm(&u, p, q, MixedOrder::SpaceOuter).unwrap(), gq * kp, max_relative = 1e-12);
    }

    #[test]
    fn cylinder_nodes_examples() {
        let (t, s) = grid1(16, 16);
        let a = FracOrder::new(0.5).unwrap();
        let tiny = ParabolicCylinder::square(0.5, vec![0.03], 0.01, a).unwrap();
        assert!(cylinder_nodes(&tiny, &t, &s).is_empty());
        let all = ParabolicCylinder::new(1.0, vec![0.0], 1.0, 1.0, a).unwrap();
        assert_eq!(cylinder_nodes(&all, &t, &s).len(), 16 * 16);

        let c = ParabolicCylinder::square(1.0, vec![0.0], 0.5, a).unwrap();
        let got = cylinder_nodes(&c, &t, &s);
        let mut brute = Vec::new();
        for k in 0..=16 {
            for i in 0..16 {
                let tk = k as f64 / 16.0;
                let x = i as f64 / 16.0;
                let dx = x.min(1.0 - x);
                if tk > 1.0 - 0.5f64.powi(4) && tk <= 1.0 && dx < 0.5 {
                    brute.push(k * 16 + i);
                }
            }
        }
        assert_eq!(got, brute);
    }

    #[test]
    fn holder_examples() {
        let t = TimeGrid::uniform(1.0, 7).unwrap();
        let s = SpaceGrid::new(1, 1.0, 8).unwrap();
        let a = FracOrder::new(0.5).unwrap();
        let c = GridFunction::from_fn(t, s, |_, _| 3.0);
        assert_eq!(holder_seminorm(&c, 0.5, a, 0).unwrap().value, 0.0);
        let u = GridFunction::from_fn(t, s, |_, x| x[0]);
        let rep = holder_seminorm(&u, 0.5, a, 0).unwrap();
        assert!(rep.exhaustive && rep.value > 0.0);
        let mut brute: f64 = 0.0;
        for i in 0..64 {
            for j in 0..64 {
                if i == j {
                    continue;
                }
                let (ki, si, kj, sj) = (i / 8, i % 8, j / 8, j % 8);
                let dt = (ki as f64 - kj as f64).abs() / 7.0;
                let xi = si as f64 / 8.0;
                let xj = sj as f64 / 8.0;
                let d = (xi - xj).abs();
                let dx = d.min(1.0 - d);
                brute = brute.max((xi - xj).abs() / (dt.powf(0.125) + dx.sqrt()));
            }
        }
        assert_relative_eq!(rep.value, brute, max_relative = 1e-14);
        let scaled = holder_seminorm(&u.scale(-2.5), 0.5, a, 0).unwrap();
        assert_relative_eq!(scaled.value, 2.5 * rep.value, max_relative = 1e-14);
        assert!(holder_seminorm(&u, 1.0, a, 0).is_err());
    }
}
