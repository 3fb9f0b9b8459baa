//! Parabolic maximal functions, level sets of the Hessian, the layer-cake
//! identity, the `u = w + v` splitting, the `A/B` measure inequality and the
//! covering ("ink spots") lemma on the lattice.
//!
//! All measures count lattice nodes: a cylinder's measure is the number of
//! nodes of the infinite lattice it contains, times `h Δx^d`, whether or not
//! those nodes lie on the stored grid. Values off the grid are zero, which is
//! the zero extension to negative times. Use [`GridFunction::pad_past`] to make
//! room for negative times where maximal functions are positive.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;

use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::estimates::ladder_step;
use crate::fraccore::FracOrder;
use crate::grids::{finite_diff, GridFunction, SpaceGrid, TimeGrid};
use crate::rng::{self, purpose};
use crate::solver::{equation_residual, solve, SolveConfig};

const EPS: f64 = 1e-9;

/// Number of lattice times in `(t - τ, t]` for a node time `t`.
fn back_count(tau: f64, h: f64) -> usize {
    ((tau / h - EPS).ceil() as usize).max(1)
}

/// Number of lattice times in `(t, t + τ]`.
fn fwd_count(tau: f64, h: f64) -> usize {
    (tau / h + EPS).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyShape {
    /// `Q_R`.
    Square,
    /// `Q_{R1,R2}` with independent radii.
    Rectangular,
    /// `C_R`, cut at the top of the grid.
    TwoSided,
}

/// Finite stand-in for "all cylinders": lattice centers and dyadic radii.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderFamily {
    pub shape: FamilyShape,
    pub alpha: FracOrder,
    /// Spatial radii.
    pub radii: Vec<f64>,
    /// Time radii `R1` of the rectangular shape.
    pub time_radii: Vec<f64>,
    /// `(k, s)` centers; `None` means every node of the grid.
    pub centers: Option<Vec<(usize, usize)>>,
}

impl CylinderFamily {
    /// Radii `2Δx, 4Δx, …` up to `L/2`; time radii with `R1^{2/α} = h, 2h, …`
    /// until the whole interval is covered.
    pub fn dyadic(shape: FamilyShape, alpha: FracOrder, time: &TimeGrid, space: &SpaceGrid) -> Self {
        let mut radii = Vec::new();
        let mut r = 2.0 * space.spacing();
        while r <= 0.5 * space.box_length() * (1.0 + EPS) {
            radii.push(r);
            r *= 2.0;
        }
        let mut time_radii = Vec::new();
        let span = time.t_end() - time.t0;
        let mut tau = time.h;
        loop {
            time_radii.push(tau.powf(alpha.value() / 2.0));
            if tau >= span * (1.0 - EPS) {
                break;
            }
            tau *= 2.0;
        }
        CylinderFamily { shape, alpha, radii, time_radii, centers: None }
    }

    pub fn with_centers(mut self, centers: Vec<(usize, usize)>) -> Self {
        self.centers = Some(centers);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() || (self.shape == FamilyShape::Rectangular && self.time_radii.is_empty()) {
            return Err(Error::Argument("cylinder family has no radii".into()));
        }
        if self.radii.iter().chain(&self.time_radii).any(|r| !(*r > 0.0)) {
            return Err(Error::Argument("cylinder radii must be positive".into()));
        }
        if matches!(&self.centers, Some(c) if c.is_empty()) {
            return Err(Error::Argument("cylinder family has no centers".into()));
        }
        Ok(())
    }

    fn tau(&self, r1: f64) -> f64 {
        r1.powf(2.0 / self.alpha.value())
    }

    /// Largest time extent `R1^{2/α}` in the family.
    pub fn max_time_extent(&self, strong: bool) -> f64 {
        let rect = strong || self.shape == FamilyShape::Rectangular;
        let rs = if rect { &self.time_radii } else { &self.radii };
        rs.iter().map(|&r| self.tau(r)).fold(0.0, f64::max)
    }

    /// Past padding that holds every truncated two-sided cylinder whose
    /// center lies within one time extent of the original grid.
    pub fn padding(&self, h: f64) -> usize {
        2 * (self.max_time_extent(false) / h).ceil() as usize + 1
    }

    /// `(back, forward, spatial radius)` windows in node counts.
    fn windows(&self, h: f64, strong: bool) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        match (self.shape, strong) {
            (_, true) | (FamilyShape::Rectangular, false) => {
                for &r1 in &self.time_radii {
                    for &r2 in &self.radii {
                        out.push((back_count(self.tau(r1), h), 0, r2));
                    }
                }
            }
            (FamilyShape::Square, false) => {
                for &r in &self.radii {
                    out.push((back_count(self.tau(r), h), 0, r));
                }
            }
            (FamilyShape::TwoSided, false) => {
                for &r in &self.radii {
                    let tau = self.tau(r);
                    out.push((back_count(tau, h), fwd_count(tau, h), r));
                }
            }
        }
        out
    }
}

/// Neighbour table `nb[o][s]` for the ball offsets of radius `r`.
fn neighbour_table(space: &SpaceGrid, r: f64) -> Vec<Vec<usize>> {
    let m = space.num_nodes();
    space.ball_offsets(r).iter().map(|o| (0..m).map(|s| space.shift_multi(s, o)).collect()).collect()
}

/// Time-prefix sums of ball sums of a scalar field on `nt` time slices.
struct BallPrefix {
    m: usize,
    nt: usize,
    prefix: Vec<f64>,
}

impl BallPrefix {
    fn new(vals: &[f64], nt: usize, m: usize, nb: &[Vec<usize>]) -> Self {
        let mut bs = vec![0.0; nt * m];
        bs.par_chunks_mut(m).enumerate().for_each(|(k, row)| {
            let slice = &vals[k * m..(k + 1) * m];
            for (s, out) in row.iter_mut().enumerate() {
                *out = nb.iter().map(|t| slice[t[s]]).sum();
            }
        });
        let mut prefix = vec![0.0; (nt + 1) * m];
        for k in 0..nt {
            for s in 0..m {
                prefix[(k + 1) * m + s] = prefix[k * m + s] + bs[k * m + s];
            }
        }
        BallPrefix { m, nt, prefix }
    }

    /// Sum over time slices `lo..=hi` clipped to the grid.
    fn window(&self, s: usize, lo: isize, hi: isize) -> f64 {
        let lo = lo.max(0);
        let hi = hi.min(self.nt as isize - 1);
        if lo > hi {
            return 0.0;
        }
        self.prefix[(hi as usize + 1) * self.m + s] - self.prefix[lo as usize * self.m + s]
    }
}

/// `out[k] = max col[j]` over `j ∈ [k+lo, k+hi] ∩ [0, n)`; `-∞` if empty.
fn sliding_max(col: &[f64], lo: isize, hi: isize) -> Vec<f64> {
    let n = col.len() as isize;
    let mut out = vec![f64::NEG_INFINITY; col.len()];
    let mut dq: VecDeque<isize> = VecDeque::new();
    let mut next = 0isize;
    for k in 0..n {
        let (a, b) = ((k + lo).max(0), (k + hi).min(n - 1));
        while next <= b {
            while let Some(&back) = dq.back() {
                if col[back as usize] <= col[next as usize] {
                    dq.pop_back();
                } else {
                    break;
                }
            }
            dq.push_back(next);
            next += 1;
        }
        while let Some(&f) = dq.front() {
            if f < a {
                dq.pop_front();
            } else {
                break;
            }
        }
        if a <= b {
            if let Some(&f) = dq.front() {
                out[k as usize] = col[f as usize];
            }
        }
    }
    out
}

fn abs_scalar(g: &GridFunction) -> Vec<f64> {
    if g.components == 1 {
        g.values().iter().map(|v| v.abs()).collect()
    } else {
        g.magnitude().into_values()
    }
}

/// Maximal function of `|g|`: at each node the largest average over family
/// cylinders containing it. `strong` takes independent time and space radii.
pub fn maximal(g: &GridFunction, fam: &CylinderFamily, strong: bool) -> Result<GridFunction> {
    fam.validate()?;
    let vals = abs_scalar(g);
    let m = g.space.num_nodes();
    let nt = g.time.nodes();
    let mut best = vec![f64::NEG_INFINITY; nt * m];
    let windows = fam.windows(g.time.h, strong);
    let mut cache: Option<(f64, Vec<Vec<usize>>, BallPrefix)> = None;
    for (back, fwd, r) in windows {
        if cache.as_ref().map(|c| c.0) != Some(r) {
            let nb = neighbour_table(&g.space, r);
            let pre = BallPrefix::new(&vals, nt, m, &nb);
            cache = Some((r, nb, pre));
        }
        let (_, nb, pre) = cache.as_ref().unwrap();
        let count = ((back + fwd) * nb.len()) as f64;
        let avg_at = |k: usize, s: usize| pre.window(s, k as isize - back as isize + 1, (k + fwd) as isize) / count;
        match &fam.centers {
            None => {
                // centers whose window holds node k: k_c ∈ [k - fwd, k + back - 1]
                let mut ballmax = vec![0.0; nt * m];
                ballmax.par_chunks_mut(m).enumerate().for_each(|(k, row)| {
                    let avg: Vec<f64> = (0..m).map(|s| avg_at(k, s)).collect();
                    for (s, out) in row.iter_mut().enumerate() {
                        *out = nb.iter().map(|t| avg[t[s]]).fold(f64::NEG_INFINITY, f64::max);
                    }
                });
                let cols: Vec<Vec<f64>> = (0..m)
                    .into_par_iter()
                    .map(|s| {
                        let col: Vec<f64> = (0..nt).map(|k| ballmax[k * m + s]).collect();
                        sliding_max(&col, -(fwd as isize), back as isize - 1)
                    })
                    .collect();
                for (s, col) in cols.iter().enumerate() {
                    for (k, v) in col.iter().enumerate() {
                        let b = &mut best[k * m + s];
                        *b = b.max(*v);
                    }
                }
            }
            Some(centers) => {
                for &(kc, sc) in centers {
                    if kc >= nt || sc >= m {
                        return Err(Error::Argument(format!("center ({kc}, {sc}) lies outside the grid")));
                    }
                    let avg = avg_at(kc, sc);
                    let lo = kc.saturating_sub(back - 1);
                    let hi = (kc + fwd).min(nt - 1);
                    for k in lo..=hi {
                        for t in nb {
                            let b = &mut best[k * m + t[sc]];
                            *b = b.max(avg);
                        }
                    }
                }
            }
        }
    }
    let uncovered = best.iter().filter(|v| v.is_infinite()).count();
    if uncovered > 0 {
        log::warn!("{uncovered} nodes are covered by no family cylinder; their maximal value is set to 0");
    }
    let out = best.into_iter().map(|v| if v.is_finite() { v } else { 0.0 }).collect();
    GridFunction::new(g.time, g.space, 1, out)
}

/// Measure of `{|g| > s}` over the nodes `k ≥ 1`.
pub fn level_measure(g: &GridFunction, s: f64) -> f64 {
    let m = g.space.num_nodes();
    let cell = g.time.h * g.space.cell_volume();
    let vals = abs_scalar(g);
    vals[m..].iter().filter(|&&v| v > s).count() as f64 * cell
}

/// Sorted magnitudes with their cell measure: `|{g > s}|` by binary search.
#[derive(Debug, Clone)]
pub struct Distribution {
    sorted: Vec<f64>,
    cell: f64,
}

impl Distribution {
    pub fn new(values: &[f64], cell: f64) -> Self {
        let mut sorted: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Distribution { sorted, cell }
    }

    /// Magnitudes of the nodes `k ≥ 1`.
    pub fn of(g: &GridFunction) -> Self {
        let m = g.space.num_nodes();
        Self::new(&abs_scalar(g)[m..], g.time.h * g.space.cell_volume())
    }

    pub fn measure_above(&self, s: f64) -> f64 {
        let idx = self.sorted.partition_point(|&v| v <= s);
        (self.sorted.len() - idx) as f64 * self.cell
    }

    pub fn max(&self) -> f64 {
        self.sorted.last().copied().unwrap_or(0.0)
    }

    /// Smallest positive value.
    pub fn min_positive(&self) -> Option<f64> {
        self.sorted.iter().copied().find(|&v| v > 0.0)
    }

    /// Distinct positive values in increasing order, where `measure_above` jumps.
    pub fn jumps(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.sorted.iter().copied().filter(|&v| v > 0.0).collect();
        out.dedup();
        out
    }

    pub fn lp_pow(&self, p: f64) -> f64 {
        self.sorted.iter().map(|v| v.powf(p)).sum::<f64>() * self.cell
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        left + right + diff / 15.0
    } else {
        adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` with absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(&f, a, b, fa, fm, fb, whole, tol, 48)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerCake {
    /// `‖g‖_p^p` summed directly.
    pub lhs: f64,
    /// `p κ^p ∫_0^∞ |{g > κs}| s^{p-1} ds` by quadrature.
    pub rhs: f64,
    /// `|lhs - rhs| / lhs`.
    pub gap: f64,
}

/// Layer cake of a distribution, with the threshold axis scaled by `kappa`.
pub fn layer_cake_distribution(dist: &Distribution, p: f64, kappa: f64, rel_tol: f64) -> Result<LayerCake> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::Argument(format!("layer cake needs p ∈ (1,∞), got {p}")));
    }
    if !(kappa > 0.0) {
        return Err(Error::Argument(format!("κ must be positive, got {kappa}")));
    }
    let lhs = dist.lp_pow(p);
    let top = dist.max() / kappa;
    let tol = rel_tol * lhs.max(f64::MIN_POSITIVE) / (p * kappa.powf(p));
    // split at the jumps so every piece has a smooth integrand
    let mut integral = 0.0;
    let mut lo = 0.0;
    for v in dist.jumps() {
        let hi = v / kappa;
        if hi > lo {
            let level = dist.measure_above(kappa * 0.5 * (lo + hi));
            integral += level * integrate(|s| s.powf(p - 1.0), lo, hi, tol * (hi - lo) / top / level.max(f64::MIN_POSITIVE));
        }
        lo = hi;
    }
    let rhs = p * kappa.powf(p) * integral;
    let gap = if lhs == 0.0 { rhs.abs() } else { (lhs - rhs).abs() / lhs };
    Ok(LayerCake { lhs, rhs, gap })
}

/// `‖D²u‖_p^p` against `p ∫ |A(s)| s^{p-1} ds`.
pub fn layer_cake(u: &GridFunction, p: f64) -> Result<LayerCake> {
    let d2 = finite_diff(u, 2)?;
    layer_cake_distribution(&Distribution::of(&d2), p, 1.0, 1e-6)
}

/// Set of lattice nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    pub time: TimeGrid,
    pub space: SpaceGrid,
    members: Vec<bool>,
}

impl NodeSet {
    pub fn empty(time: TimeGrid, space: SpaceGrid) -> Self {
        NodeSet { time, space, members: vec![false; time.nodes() * space.num_nodes()] }
    }

    pub fn from_indices(time: TimeGrid, space: SpaceGrid, idx: &[usize]) -> Result<Self> {
        let mut set = Self::empty(time, space);
        for &i in idx {
            if i >= set.members.len() {
                return Err(Error::Argument(format!("node index {i} is outside the grid")));
            }
            set.members[i] = true;
        }
        Ok(set)
    }

    /// Nodes `k ≥ 1` with `|g| > s`.
    pub fn superlevel(g: &GridFunction, s: f64) -> Self {
        let m = g.space.num_nodes();
        let vals = abs_scalar(g);
        let members = vals.iter().enumerate().map(|(i, &v)| i >= m && v > s).collect();
        NodeSet { time: g.time, space: g.space, members }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.get(i).copied().unwrap_or(false)
    }

    pub fn insert(&mut self, i: usize) {
        self.members[i] = true;
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&b| b)
    }

    /// Sorted member indices.
    pub fn indices(&self) -> Vec<usize> {
        self.members.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
    }

    pub fn measure(&self) -> f64 {
        self.len() as f64 * self.time.h * self.space.cell_volume()
    }

    pub fn is_subset(&self, other: &NodeSet) -> bool {
        self.members.len() == other.members.len() && self.members.iter().zip(&other.members).all(|(&a, &b)| !a || b)
    }

    fn indicator(&self) -> Vec<f64> {
        self.members.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Dense cylinder whose truncation is not inside `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub k: usize,
    pub s: usize,
    pub radius: f64,
    /// `|C ∩ E| / |C|`.
    pub density: f64,
    /// Share of the truncated cylinder covered by `F`.
    pub covered: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InkSpotsReport {
    pub hypothesis_holds: bool,
    /// `E ⊄ F` violates the hypothesis too; reported separately.
    pub e_subset_f: bool,
    pub witness: Option<Witness>,
    pub cylinders_examined: usize,
    /// `|E| / (γ |F|)`.
    pub n_hat: f64,
    /// `2 · 5^{d + 2/α}`.
    pub bound: f64,
    pub within_bound: bool,
}

/// Constant of the covering argument, `2 · 5^{d + 2/α}`.
pub fn ink_spots_bound(d: usize, alpha: FracOrder) -> f64 {
    2.0 * 5f64.powf(d as f64 + 2.0 / alpha.value())
}

/// Relative slack on [`ink_spots_bound`] for lattice quantization.
pub const INK_SPOTS_SLACK: f64 = 0.1;

fn check_family_grid(e: &NodeSet, f: &NodeSet, fam: &CylinderFamily) -> Result<()> {
    if e.time != f.time || e.space != f.space {
        return Err(Error::Argument("E and F live on different lattices".into()));
    }
    if fam.shape != FamilyShape::TwoSided {
        return Err(Error::Argument("the covering scan needs a two-sided family".into()));
    }
    fam.validate()
}

/// Scans every family cylinder `C` with `|C ∩ E| ≥ γ|C|` for `Ĉ ⊂ F`, then
/// reports `N̂ = |E| / (γ|F|)` against the covering constant.
pub fn ink_spots(e: &NodeSet, f: &NodeSet, gamma: f64, fam: &CylinderFamily) -> Result<InkSpotsReport> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Argument(format!("γ must lie in (0,1), got {gamma}")));
    }
    check_family_grid(e, f, fam)?;
    let time = e.time;
    let m = e.space.num_nodes();
    let nt = time.nodes();
    let e_subset_f = e.is_subset(f);
    let (ei, fi) = (e.indicator(), f.indicator());
    let mut examined = 0usize;
    let mut witness = None;
    'outer: for (back, fwd, r) in fam.windows(time.h, false) {
        let nb = neighbour_table(&e.space, r);
        let pe = BallPrefix::new(&ei, nt, m, &nb);
        let pf = BallPrefix::new(&fi, nt, m, &nb);
        let full = ((back + fwd) * nb.len()) as f64;
        let centers: Box<dyn Iterator<Item = (usize, usize)>> = match &fam.centers {
            None => Box::new((0..nt).flat_map(move |k| (0..m).map(move |s| (k, s)))),
            Some(c) => Box::new(c.iter().copied()),
        };
        for (k, s) in centers {
            examined += 1;
            let lo = k as isize - back as isize + 1;
            let ce = pe.window(s, lo, (k + fwd) as isize);
            if ce < gamma * full {
                continue;
            }
            let hi = (k + fwd).min(nt - 1) as isize;
            let need = ((hi - lo + 1) as usize * nb.len()) as f64;
            let cf = pf.window(s, lo, hi);
            if cf < need {
                witness = Some(Witness { k, s, radius: r, density: ce / full, covered: cf / need });
                break 'outer;
            }
        }
    }
    let bound = ink_spots_bound(e.space.dim(), fam.alpha);
    let fm = f.measure();
    let n_hat = if e.is_empty() { 0.0 } else { e.measure() / (gamma * fm) };
    let hypothesis_holds = witness.is_none() && e_subset_f;
    Ok(InkSpotsReport {
        hypothesis_holds,
        e_subset_f,
        witness,
        cylinders_examined: examined,
        n_hat,
        bound,
        within_bound: n_hat <= bound * (1.0 + INK_SPOTS_SLACK),
    })
}

/// Smallest `F ⊇ E` satisfying the covering hypothesis: `E` plus the
/// truncation of every `γ`-dense family cylinder.
pub fn covering_closure(e: &NodeSet, gamma: f64, fam: &CylinderFamily) -> Result<NodeSet> {
    check_family_grid(e, e, fam)?;
    let m = e.space.num_nodes();
    let nt = e.time.nodes();
    let ei = e.indicator();
    let mut out = e.clone();
    for (back, fwd, r) in fam.windows(e.time.h, false) {
        let nb = neighbour_table(&e.space, r);
        let pe = BallPrefix::new(&ei, nt, m, &nb);
        let full = ((back + fwd) * nb.len()) as f64;
        let mut dense = vec![0.0; nt * m];
        let centers: Vec<(usize, usize)> = match &fam.centers {
            None => (0..nt).flat_map(|k| (0..m).map(move |s| (k, s))).collect(),
            Some(c) => c.clone(),
        };
        for (k, s) in centers {
            if pe.window(s, k as isize - back as isize + 1, (k + fwd) as isize) >= gamma * full {
                dense[k * m + s] = 1.0;
            }
        }
        // node k' lies in the truncation of C(k) iff k ∈ [k' - fwd, k' + back - 1]
        for s in 0..m {
            let col: Vec<f64> = (0..nt).map(|k| dense[k * m + s]).collect();
            let hit = sliding_max(&col, -(fwd as isize), back as isize - 1);
            for (k, v) in hit.iter().enumerate() {
                if *v > 0.5 {
                    for t in &nb {
                        out.members[k * m + t[s]] = true;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Random union of small blobs and scattered nodes at times `t > 0`.
pub fn synthetic_e(seed: u64, time: TimeGrid, space: SpaceGrid) -> NodeSet {
    let mut rng = rng::stream(seed, purpose::SYNTHETIC_SETS);
    let m = space.num_nodes();
    let nt = time.nodes();
    let first = ((-time.t0 / time.h).round().max(0.0) as usize + 1).min(nt - 1);
    let mut set = NodeSet::empty(time, space);
    let blobs = rng.gen_range(1..=6);
    for _ in 0..blobs {
        let k0 = rng.gen_range(first..nt);
        let s0 = rng.gen_range(0..m);
        let half = rng.gen_range(0..=4usize);
        let r = rng.gen_range(0.0..3.0) * space.spacing() + 1e-12;
        let offs = space.ball_offsets(r);
        for k in k0.saturating_sub(half).max(first)..=(k0 + half).min(nt - 1) {
            for o in &offs {
                set.insert(k * m + space.shift_multi(s0, o));
            }
        }
    }
    let rho: f64 = rng.gen_range(0.0..0.05);
    for k in first..nt {
        for s in 0..m {
            if rng.gen::<f64>() < rho {
                set.insert(k * m + s);
            }
        }
    }
    set
}

/// Extra term of `B(s)` for `x`-dependent coefficients with small mean
/// oscillation `γ0`, using `M|D²u|^{pμ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmoTerm {
    pub gamma0: f64,
    pub mu: f64,
}

/// Fields on the past-padded lattice from which `A(s)` and `B(s)` are cut.
#[derive(Debug, Clone)]
pub struct LevelFields {
    /// `|D²u|`, zero on the padding.
    pub hess: GridFunction,
    /// The function whose superlevel sets are `B(s)`.
    pub b_field: GridFunction,
    pub p: f64,
    pub p1: f64,
    pub gamma: f64,
    pub gamma0: Option<f64>,
    /// Two-sided family used for the covering scans.
    pub family: CylinderFamily,
}

impl LevelFields {
    /// `γ^{-1/p}(M|f|^p)^{1/p} + γ^{-1/p1}(SM|D²u|^p)^{1/p}`, plus the
    /// oscillation term when `bmo` is given.
    pub fn new(u: &GridFunction, f: &GridFunction, alpha: FracOrder, p: f64, gamma: f64, bmo: Option<BmoTerm>) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Argument(format!("γ must lie in (0,1), got {gamma}")));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::Argument(format!("p must lie in (1,∞), got {p}")));
        }
        let d = u.space.dim();
        let p1 = ladder_step(d, alpha.value(), p).p1;
        let family = CylinderFamily::dyadic(FamilyShape::TwoSided, alpha, &u.time, &u.space);
        let pad = family.padding(u.time.h);
        let hess = finite_diff(u, 2)?.magnitude().pad_past(pad);
        let fp = f.magnitude().pad_past(pad);
        let square = CylinderFamily::dyadic(FamilyShape::Square, alpha, &hess.time, &hess.space);
        let pow = |g: &GridFunction, q: f64| g.with_values(g.values().iter().map(|v| v.powf(q)).collect());
        let mf = maximal(&pow(&fp, p), &square, false)?;
        let smu = maximal(&pow(&hess, p), &square, true)?;
        let mut b: Vec<f64> = mf
            .values()
            .iter()
            .zip(smu.values())
            .map(|(a, b)| gamma.powf(-1.0 / p) * a.powf(1.0 / p) + gamma.powf(-1.0 / p1) * b.powf(1.0 / p))
            .collect();
        if let Some(BmoTerm { gamma0, mu }) = bmo {
            if !(mu > 1.0) || !(gamma0 > 0.0) {
                return Err(Error::Argument(format!("oscillation term needs μ > 1 and γ0 > 0, got μ={mu}, γ0={gamma0}")));
            }
            let nu = mu / (mu - 1.0);
            let mh = maximal(&pow(&hess, p * mu), &square, false)?;
            let c = gamma.powf(-1.0 / p) * gamma0.powf(1.0 / (p * nu));
            for (bv, mv) in b.iter_mut().zip(mh.values()) {
                *bv += c * mv.powf(1.0 / (p * mu));
            }
        }
        let b_field = hess.with_values(b);
        Ok(LevelFields { hess, b_field, p, p1, gamma, gamma0: bmo.map(|b| b.gamma0), family })
    }

    /// Geometric thresholds with ratio `2^{1/4}` from the smallest positive
    /// to the largest `|D²u|`.
    pub fn thresholds(&self) -> Vec<f64> {
        let dist = Distribution::of(&self.hess);
        let Some(lo) = dist.min_positive() else { return Vec::new() };
        let hi = dist.max();
        let ratio = 2f64.powf(0.25);
        let mut s = lo;
        let mut out = Vec::new();
        while s <= hi * (1.0 + EPS) {
            out.push(s);
            s *= ratio;
        }
        out
    }
}

/// One row per threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetReport {
    pub thresholds: Vec<f64>,
    /// `|A(κ s)|`.
    pub a_measures: Vec<f64>,
    /// `|B(s)|`.
    pub b_measures: Vec<f64>,
    /// `|A(κs)| / (γ|B(s)|)`, `None` where both vanish.
    pub ratios: Vec<Option<f64>>,
    pub kappa: f64,
    pub gamma: f64,
    pub gamma0: Option<f64>,
    /// `‖D²u‖_p^p` by the layer-cake quadrature.
    pub layer_cake: f64,
    /// Supremum of the finite ratios.
    pub n_hat: f64,
    /// Thresholds where `|B(s)| = 0 < |A(κs)|`.
    pub violations: Vec<f64>,
}

/// Supremum over thresholds of `|A(κs)| / (γ|B(s)|)`.
pub fn ab_inequality(fields: &LevelFields, kappa: f64) -> Result<LevelSetReport> {
    if !(kappa > 1.0) {
        return Err(Error::Argument(format!("κ must exceed 1, got {kappa}")));
    }
    let da = Distribution::of(&fields.hess);
    let db = Distribution::of(&fields.b_field);
    let thresholds = fields.thresholds();
    let mut a_measures = Vec::with_capacity(thresholds.len());
    let mut b_measures = Vec::with_capacity(thresholds.len());
    let mut ratios = Vec::with_capacity(thresholds.len());
    let mut violations = Vec::new();
    for &s in &thresholds {
        let a = da.measure_above(kappa * s);
        let b = db.measure_above(s);
        a_measures.push(a);
        b_measures.push(b);
        ratios.push(match (a > 0.0, b > 0.0) {
            (false, false) => None,
            (true, false) => {
                violations.push(s);
                None
            }
            _ => Some(a / (fields.gamma * b)),
        });
    }
    let n_hat = ratios.iter().flatten().copied().fold(0.0, f64::max);
    let layer_cake = layer_cake_distribution(&da, fields.p, kappa, 1e-6)?.rhs;
    Ok(LevelSetReport {
        thresholds,
        a_measures,
        b_measures,
        ratios,
        kappa,
        gamma: fields.gamma,
        gamma0: fields.gamma0,
        layer_cake,
        n_hat,
        violations,
    })
}

/// Candidate values for `κ̂`.
pub const KAPPA_GRID: [f64; 18] = [1.1, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 16.0, 20.0, 32.0, 50.0, 64.0, 100.0];

/// Covering hypothesis for `E = A(κs)`, `F = B(s)` at one threshold.
pub fn level_pair_scan(fields: &LevelFields, kappa: f64, s: f64) -> Result<(NodeSet, NodeSet, InkSpotsReport)> {
    let e = NodeSet::superlevel(&fields.hess, kappa * s);
    let f = NodeSet::superlevel(&fields.b_field, s);
    let rep = ink_spots(&e, &f, fields.gamma, &fields.family)?;
    Ok((e, f, rep))
}

/// Smallest `κ` in [`KAPPA_GRID`] for which every dense cylinder of
/// `A(κs)` has its truncation inside `B(s)` at every threshold.
pub fn fit_kappa(fields: &LevelFields) -> Result<Option<f64>> {
    let thresholds = fields.thresholds();
    let top = Distribution::of(&fields.hess).max();
    for kappa in KAPPA_GRID {
        let active: Vec<f64> = thresholds.iter().copied().filter(|&s| kappa * s < top).collect();
        let ok = active
            .par_iter()
            .map(|&s| level_pair_scan(fields, kappa, s).map(|r| r.2.hypothesis_holds))
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .all(|b| b);
        if ok {
            return Ok(Some(kappa));
        }
    }
    Ok(None)
}

/// Where the splitting is examined.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeSpec {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub r: f64,
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct DecomposeReport {
    /// Solution with spatially cut-off data on `(t0 - R^{2/α}, t0]`, zero
    /// elsewhere.
    pub w: GridFunction,
    pub v: GridFunction,
    pub p1: f64,
    /// `(⨍_{Q_R}|D²w|^p)^{1/p}`.
    pub w_lhs: f64,
    /// `(⨍_{Q_{2R}}|f|^p)^{1/p}`.
    pub f_term: f64,
    /// `(⨍_{Q_{R/2}}|D²v|^{p1})^{1/p1}`, or the maximum when `p1 = ∞`.
    pub v_lhs: f64,
    /// Weighted window averages `2^{-kα}(⨍|D²u|^p)^{1/p}`.
    pub tail_terms: Vec<f64>,
    /// Bound on the truncated part of the tail.
    pub tail_remainder: f64,
    pub v_rhs: f64,
    pub w_ratio: f64,
    pub v_ratio: f64,
    /// `max |-∂_t^α v + A v|` on the window `× B_R`.
    pub v_residual: f64,
    pub window: (usize, usize),
}

/// Smooth step: 1 for `x ≤ 0`, 0 for `x ≥ 1`.
fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x >= 1.0 {
        return 0.0;
    }
    let a = (-1.0 / (1.0 - x)).exp();
    let b = (-1.0 / x).exp();
    a / (a + b)
}

/// `(⨍ |g|^p)^{1/p}` over `(lo, hi] × B_r(x)` with count-based measure; the
/// maximum for `p = ∞`.
pub fn window_average(g: &GridFunction, lo: f64, hi: f64, center: &[f64], r: f64, p: f64) -> Result<f64> {
    let time = g.time;
    let idx = |t: f64| ((t - time.t0) / time.h + EPS).floor() as i64;
    let (klo, khi) = (idx(lo) + 1, idx(hi));
    if khi < klo {
        return Err(Error::MeasureZero(format!("time window ({lo}, {hi}] holds no lattice time")));
    }
    let ball = g.space.ball_nodes(center, r);
    if ball.is_empty() {
        return Err(Error::MeasureZero(format!("ball of radius {r} holds no node")));
    }
    let vals = abs_scalar(g);
    let m = g.space.num_nodes();
    let ks = klo.max(0)..=khi.min(time.n as i64);
    if p.is_infinite() {
        return Ok(ks.flat_map(|k| ball.iter().map(move |&s| (k as usize) * m + s)).map(|i| vals[i]).fold(0.0, f64::max));
    }
    let sum: f64 = ks.flat_map(|k| ball.iter().map(move |&s| (k as usize) * m + s)).map(|i| vals[i].powf(p)).sum();
    let count = ((khi - klo + 1) as usize * ball.len()) as f64;
    Ok((sum / count).powf(1.0 / p))
}

/// Splits a computed solution as `u = w + v` near `(t0, x0)` and evaluates
/// both local estimates.
pub fn decompose(u: &GridFunction, f: &GridFunction, coeffs: &CoefficientField, alpha: FracOrder, spec: &DecomposeSpec) -> Result<DecomposeReport> {
    if !coeffs.time_only {
        return Err(Error::Hypothesis("decompose: leading coefficients must depend on t only".into()));
    }
    if !(spec.r > 0.0) || !(spec.p > 1.0 && spec.p.is_finite()) {
        return Err(Error::Argument(format!("decompose needs R > 0 and p ∈ (1,∞), got R={}, p={}", spec.r, spec.p)));
    }
    let time = u.time;
    let space = u.space;
    let m = space.num_nodes();
    let a = alpha.value();
    let tau = spec.r.powf(2.0 / a);
    let k0 = ((spec.t0 - time.t0) / time.h).round();
    if k0 < 1.0 || k0 > time.n as f64 {
        return Err(Error::Argument(format!("t0 = {} is not inside the grid", spec.t0)));
    }
    let k0 = k0 as usize;
    let ks = (((spec.t0 - tau - time.t0) / time.h).round().max(0.0) as usize).min(k0);
    if ks == k0 {
        return Err(Error::Argument(format!("R^(2/α) = {tau} is below the time step")));
    }
    // w: data ζ f on (t_ks, t_k0], zero initial value at t_ks
    let zeta: Vec<f64> = (0..m).map(|s| smooth_step((space.periodic_distance(&space.coords(s), &spec.x0) - spec.r) / spec.r)).collect();
    let fw = f.time_window(ks, k0)?;
    let fw = fw.with_values(fw.values().iter().enumerate().map(|(i, v)| v * zeta[i % m]).collect());
    let cw = coeffs.time_window(ks, k0)?;
    let w_sub = solve(&SolveConfig::new(alpha, cw, fw))?.u;
    let mut wv = vec![0.0; u.values().len()];
    wv[ks * m..(k0 + 1) * m].copy_from_slice(w_sub.values());
    let w = u.with_values(wv);
    let v = u.sub(&w);
    let p = spec.p;
    let p1 = ladder_step(space.dim(), a, p).p1;
    let (t0, x0, r) = (time.time(k0), &spec.x0, spec.r);
    let d2w = finite_diff(&w, 2)?.magnitude();
    let d2v = finite_diff(&v, 2)?.magnitude();
    let d2u = finite_diff(u, 2)?.magnitude();
    let w_lhs = window_average(&d2w, t0 - tau, t0, x0, r, p)?;
    let f_term = window_average(f, t0 - 2f64.powf(2.0 / a) * tau, t0, x0, 2.0 * r, p)?;
    let v_lhs = window_average(&d2v, t0 - 0.5f64.powf(2.0 / a) * tau, t0, x0, 0.5 * r, p1)?;
    let mut tail_terms = Vec::new();
    let mut k = 0i32;
    loop {
        let wgt = 2f64.powf(-(k as f64) * a);
        if wgt < 1e-6 {
            break;
        }
        let len = (2f64.powi(k + 1) + 1.0) * tau;
        tail_terms.push(wgt * window_average(&d2u, t0 - len, t0, x0, r, p)?);
        k += 1;
    }
    // past the truncation the window holds all of (0, t0], so each average is
    // at most the full integral over the shortest remaining window
    let len_k = (2f64.powi(k + 1) + 1.0) * tau;
    let full = window_average(&d2u, time.t0 - time.h, t0, x0, r, p)?;
    let span = t0 - time.t0 + time.h;
    let bound = full * (span / len_k).min(1.0).powf(1.0 / p);
    let tail_remainder = bound * 2f64.powf(-(k as f64) * a) / (1.0 - 2f64.powf(-a));
    let v_rhs = f_term + tail_terms.iter().sum::<f64>() + tail_remainder;
    let ratio = |l: f64, r: f64| if l == 0.0 { 0.0 } else { l / r };
    // v solves the homogeneous equation where the cutoff is one
    let zero_f = GridFunction::zeros(time, space, 1);
    let res = equation_residual(coeffs, alpha, &v, &zero_f)?;
    let mut v_residual = 0.0f64;
    for kk in (ks + 1)..=k0 {
        for s in 0..m {
            if space.periodic_distance(&space.coords(s), x0) < r {
                // -∂v + Av = f - ζf = 0 on the ball, up to solver tolerance
                let val = res.get(kk, s, 0) - (f.get(kk, s, 0) - zeta[s] * f.get(kk, s, 0));
                v_residual = v_residual.max(val.abs());
            }
        }
    }
    Ok(DecomposeReport {
        w,
        v,
        p1,
        w_lhs,
        f_term,
        v_lhs,
        tail_terms,
        tail_remainder,
        v_rhs,
        w_ratio: ratio(w_lhs, f_term),
        v_ratio: ratio(v_lhs, v_rhs),
        v_residual,
        window: (ks, k0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::ParabolicCylinder;

    fn a(v: f64) -> FracOrder {
        FracOrder::new(v).unwrap()
    }

    #[test]
    fn maximal_of_constant_is_constant() {
        let t = TimeGrid::uniform(1.0, 8).unwrap();
        let s = SpaceGrid::new(1, 1.0, 16).unwrap();
        let g = GridFunction::from_fn(t, s, |_, _| 1.0);
        let fam = CylinderFamily::dyadic(FamilyShape::Square, a(0.5), &t, &s);
        for strong in [false, true] {
            let mg = maximal(&g, &fam, strong).unwrap();
            // cylinders reaching below t_0 average in zeros, the node's own
            // one-slice cylinder does not
            assert!(mg.values().iter().all(|v| (v - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn sliding_max_matches_naive() {
        let col = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        for (lo, hi) in [(0, 2), (-2, 0), (-1, 3), (0, 0)] {
            let got = sliding_max(&col, lo, hi);
            for k in 0..col.len() as isize {
                let want = ((k + lo).max(0)..=(k + hi).min(7)).map(|j| col[j as usize]).fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(got[k as usize], want);
            }
        }
    }

    #[test]
    fn explicit_centers_match_filter() {
        let t = TimeGrid::uniform(1.0, 8).unwrap();
        let s = SpaceGrid::new(2, 1.0, 8).unwrap();
        let mut g = GridFunction::zeros(t, s, 1);
        g.set(5, s.flat_index([3, 4, 0]), 0, 1.0);
        for shape in [FamilyShape::Square, FamilyShape::TwoSided] {
            let fam = CylinderFamily::dyadic(shape, a(0.6), &t, &s);
            let all: Vec<(usize, usize)> = (0..t.nodes()).flat_map(|k| (0..s.num_nodes()).map(move |x| (k, x))).collect();
            for strong in [false, true] {
                let fast = maximal(&g, &fam, strong).unwrap();
                let brute = maximal(&g, &fam.clone().with_centers(all.clone()), strong).unwrap();
                for (x, y) in fast.values().iter().zip(brute.values()) {
                    assert!((x - y).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn level_measure_half() {
        let t = TimeGrid::uniform(1.0, 4).unwrap();
        let s = SpaceGrid::new(1, 1.0, 8).unwrap();
        let g = GridFunction::from_fn(t, s, |_, x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        assert!((level_measure(&g, 1e-300) - 0.5).abs() < 1e-14);
        assert_eq!(level_measure(&g, 1.0), 0.0);
    }

    #[test]
    fn layer_cake_two_valued() {
        let vals = [0.0, 1.0, 1.0, 0.0, 1.0];
        let lc = layer_cake_distribution(&Distribution::new(&vals, 0.25), 2.0, 1.0, 1e-10).unwrap();
        assert!((lc.lhs - 0.75).abs() < 1e-14);
        assert!(lc.gap < 1e-8, "{lc:?}");
    }

    #[test]
    fn single_cylinder_ink_spot() {
        let t = TimeGrid::new(-0.5, 1.0 / 32.0, 48).unwrap();
        let s = SpaceGrid::new(1, 1.0, 32).unwrap();
        let al = a(0.5);
        let r = 0.25;
        let (kc, sc) = (40, 16);
        let c = ParabolicCylinder::two_sided(t.time(kc), s.coords(sc)[..1].to_vec(), r, al).unwrap();
        let nodes = crate::grids::cylinder_nodes(&c, &t, &s);
        let e = NodeSet::from_indices(t, s, &nodes).unwrap();
        let fam = CylinderFamily { shape: FamilyShape::TwoSided, alpha: al, radii: vec![r], time_radii: vec![], centers: Some(vec![(kc, sc)]) };
        let rep = ink_spots(&e, &e, 0.5, &fam).unwrap();
        assert!(rep.hypothesis_holds);
        assert!((rep.n_hat - 2.0).abs() < 1e-14);
        let empty = NodeSet::empty(t, s);
        assert_eq!(ink_spots(&empty, &e, 0.5, &fam).unwrap().n_hat, 0.0);
    }

    #[test]
    fn closure_satisfies_hypothesis() {
        let s = SpaceGrid::new(1, 1.0, 16).unwrap();
        let al = a(0.7);
        let base = TimeGrid::uniform(1.0, 16).unwrap();
        let fam = CylinderFamily::dyadic(FamilyShape::TwoSided, al, &base, &s);
        let pad = fam.padding(base.h);
        let t = TimeGrid::new(-(pad as f64) * base.h, base.h, 16 + pad).unwrap();
        for seed in 0..5 {
            let e = synthetic_e(seed, t, s);
            let f = covering_closure(&e, 0.4, &fam).unwrap();
            let rep = ink_spots(&e, &f, 0.4, &fam).unwrap();
            assert!(rep.hypothesis_holds, "{rep:?}");
            assert!(rep.within_bound);
        }
    }

    #[test]
    fn decompose_rejects_space_dependent_coefficients() {
        let t = TimeGrid::uniform(1.0, 8).unwrap();
        let s = SpaceGrid::new(1, 1.0, 8).unwrap();
        let mut c = CoefficientField::constant(t, s, &[1.0], 0.5).unwrap();
        c.time_only = false;
        let u = GridFunction::zeros(t, s, 1);
        let spec = DecomposeSpec { t0: 1.0, x0: vec![0.5], r: 0.25, p: 2.0 };
        assert!(matches!(decompose(&u, &u, &c, a(0.5), &spec), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn decompose_with_far_data_gives_zero_w() {
        let t = TimeGrid::uniform(1.0, 64).unwrap();
        let s = SpaceGrid::new(1, 1.0, 32).unwrap();
        let c = CoefficientField::constant(t, s, &[1.0], 0.5).unwrap();
        let f = GridFunction::from_fn(t, s, |tt, x| if (x[0] - 0.5).abs() < 0.1 { tt } else { 0.0 });
        let u = solve(&SolveConfig::new(a(0.9), c.clone(), f.clone())).unwrap().u;
        // B_{2R}(0) misses the support of f
        let spec = DecomposeSpec { t0: 1.0, x0: vec![0.0], r: 0.18, p: 2.0 };
        let rep = decompose(&u, &f, &c, a(0.9), &spec).unwrap();
        assert_eq!(rep.w.max_abs(), 0.0);
        assert_eq!(rep.v.values(), u.values());
        assert!(rep.v_residual < 1e-8);
    }
}
