//! One function per subcommand: resolve parameters, run, write tables.

use std::io::BufWriter;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand::Rng;

use subdiff::coeffs::{doubling_check, gen_bmo_space, gen_rough_time, oscillation_sup, BmoProfile, BmoSpec, CoefficientField};
use subdiff::estimates::{
    apriori_constant, check_hypothesis, exponent_ladder, ladder_step_bound, min_increment, random_rhs, refinement_study, verify_inequality, EnsembleSpec,
    InequalityId, RatioRow, RhsSpec,
};
use subdiff::fraccore::{caputo_derivative, gamma_fn, FracOrder, TimeSeries};
use subdiff::grids::{lp_norm, select, GridFunction, NormSpec, Selector, SpaceGrid, TimeGrid};
use subdiff::io;
use subdiff::levelset::{
    ab_inequality, covering_closure, decompose, fit_kappa, ink_spots, layer_cake, maximal, synthetic_e, BmoTerm, CylinderFamily, DecomposeSpec, FamilyShape,
    LevelFields,
};
use subdiff::rng::{self, purpose};
use subdiff::solver::{energy_check, manufactured_exact, manufactured_rhs, solve, HistoryMode, SolveConfig};

use crate::output::{num, opt, Checks, Output};
use crate::plot::{emit_plot, loglog_slope, PlotKind};
use crate::{Command, Ctx, ProblemArgs};

pub fn dispatch(cmd: &Command, ctx: &mut Ctx) -> Result<Checks> {
    match cmd {
        Command::Fracderiv { alpha, func, refine, n0, t_end } => fracderiv(ctx, *alpha, func.clone(), *refine, *n0, *t_end),
        Command::Solve { problem, coeff, gamma0, r0, rhs, history, eps } => {
            solve_cmd(ctx, problem, coeff.clone(), *gamma0, *r0, rhs.clone(), history.clone(), *eps)
        }
        Command::Energy { alpha, n, trials, width } => energy(ctx, *alpha, *n, *trials, *width),
        Command::Apriori { problem, seeds, p, refine } => apriori(ctx, problem, *seeds, *p, *refine),
        Command::Oscillation { alpha, d, m, n, delta, gamma0, r0, profile, samples } => {
            oscillation(ctx, *alpha, *d, *m, *n, *delta, *gamma0, *r0, profile.clone(), *samples)
        }
        Command::Embed { id, d, alpha, p, q, r, theta, t_end, seeds, resolution, refine } => {
            let o = EmbedOverrides { d: *d, alpha: *alpha, p: *p, q: *q, r: *r, theta: *theta, t_end: *t_end };
            embed(ctx, id.clone(), o, *seeds, *resolution, *refine)
        }
        Command::Ladder { d, alpha, p } => ladder(ctx, *d, *alpha, *p),
        Command::Maximal { problem, shape, p } => maximal_cmd(ctx, problem, shape.clone(), *p),
        Command::Layercake { problem, runs, p } => layercake(ctx, problem, *runs, p.clone()),
        Command::Decompose { problem, t0, x0, r, p } => decompose_cmd(ctx, problem, *t0, x0.clone(), *r, *p),
        Command::Abset { problem, p, gamma, kappa, gamma0, mu } => abset(ctx, problem, *p, *gamma, *kappa, *gamma0, *mu),
        Command::Inkspots { d, alpha, m, n, instances } => inkspots(ctx, *d, *alpha, *m, *n, *instances),
        Command::Convergence { alpha, switches, delta, levels, n0 } => convergence(ctx, *alpha, *switches, *delta, *levels, *n0),
        Command::Plot { table, kind, output } => plot(table, kind, output.as_deref()),
    }
}

fn order(a: f64) -> Result<FracOrder> {
    Ok(FracOrder::new(a)?)
}

fn write_plot(out: &Output, table: &Path, kind: PlotKind, name: &str) -> Result<()> {
    let text = std::fs::read_to_string(table)?;
    std::fs::write(out.path(name), emit_plot(&text, kind)?)?;
    Ok(())
}

/// Resolved [`ProblemArgs`].
#[derive(Debug, Clone, Copy)]
struct Problem {
    alpha: f64,
    t_end: f64,
    n: usize,
    d: usize,
    l: f64,
    m: usize,
    delta: f64,
    switches: usize,
    modes: usize,
}

impl Problem {
    fn resolve(ctx: &mut Ctx, a: &ProblemArgs, def: Problem) -> Result<Self> {
        let p = &mut ctx.params;
        Ok(Problem {
            alpha: p.get("alpha", a.alpha, def.alpha)?,
            t_end: p.get("t_end", a.t_end, def.t_end)?,
            n: p.get("n", a.n, def.n)?,
            d: p.get("d", a.d, def.d)?,
            l: p.get("l", a.l, def.l)?,
            m: p.get("m", a.m, def.m)?,
            delta: p.get("delta", a.delta, def.delta)?,
            switches: p.get("switches", a.switches, def.switches)?,
            modes: p.get("modes", a.modes, def.modes)?,
        })
    }

    fn grids(&self) -> Result<(TimeGrid, SpaceGrid)> {
        Ok((TimeGrid::uniform(self.t_end, self.n)?, SpaceGrid::new(self.d, self.l, self.m)?))
    }

    /// Coefficients, right-hand side and solution for `seed`.
    fn run(&self, seed: u64) -> Result<(CoefficientField, GridFunction, GridFunction)> {
        let (time, space) = self.grids()?;
        let coeffs = gen_rough_time(seed, self.delta, self.switches, time, space)?;
        let f = random_rhs(seed, RhsSpec::Trig { modes: self.modes }, time, space);
        let u = solve(&SolveConfig::new(order(self.alpha)?, coeffs.clone(), f.clone()))?.u;
        Ok((coeffs, f, u))
    }
}

const PROBLEM: Problem = Problem { alpha: 0.6, t_end: 1.0, n: 32, d: 1, l: 1.0, m: 32, delta: 0.2, switches: 6, modes: 3 };

fn fracderiv(ctx: &mut Ctx, alpha: Option<f64>, func: Option<String>, refine: Option<usize>, n0: Option<usize>, t_end: Option<f64>) -> Result<Checks> {
    let p = &mut ctx.params;
    let alpha = p.get("alpha", alpha, 0.5)?;
    let func = p.get("fn", func, "t2".to_string())?;
    let levels = p.get("refine", refine, 5usize)?;
    let n0 = p.get("n0", n0, 16usize)?;
    let t_end = p.get("t_end", t_end, 1.0)?;
    let k: i32 = match func.as_str() {
        "t" => 1,
        "t2" => 2,
        "t3" => 3,
        other => bail!("unknown function {other:?} (t, t2, t3)"),
    };
    if levels < 2 {
        bail!("need at least 2 refinement levels, got {levels}");
    }
    let a = order(alpha)?;
    let out = ctx.output()?;
    let coef = gamma_fn(k as f64 + 1.0)? / gamma_fn(k as f64 + 1.0 - alpha)?;
    let mut table = out.table("convergence.csv", &["level", "n", "h", "error", "order"])?;
    let mut points = Vec::new();
    let mut scale: f64 = 0.0;
    for level in 0..levels {
        let n = n0 << level;
        let h = t_end / n as f64;
        let psi = TimeSeries::from_fn(0.0, h, n, |t| t.powi(k));
        let d = caputo_derivative(&psi, a)?;
        let err = (1..=n).map(|j| (d.at(j) - coef * psi.time(j).powf(k as f64 - alpha)).abs()).fold(0.0, f64::max);
        scale = scale.max(d.max_abs());
        let rate = points.last().map(|&(_, e): &(f64, f64)| (e / err).log2());
        table.row(vec![level.to_string(), n.to_string(), num(h), num(err), opt(rate)])?;
        points.push((h, err));
    }
    let path = table.finish()?;
    write_plot(&out, &path, PlotKind::Convergence, "convergence.svg")?;
    let mut checks = Checks::default();
    if k == 1 {
        let worst = points.iter().map(|p| p.1).fold(0.0, f64::max);
        checks.add("exact on linear data", worst <= 1e-10 * scale.max(1.0), format!("largest error {worst:.2e}"));
    } else {
        let slope = loglog_slope(&points).ok_or_else(|| anyhow!("errors vanish; no order to fit"))?;
        println!("fitted order {slope:.3}");
        checks.add("order", (slope - (2.0 - alpha)).abs() <= 0.3, format!("fitted {slope:.3}, expected {:.3}", 2.0 - alpha));
    }
    Ok(checks)
}

#[allow(clippy::too_many_arguments)]
fn solve_cmd(
    ctx: &mut Ctx,
    problem: &ProblemArgs,
    coeff: Option<String>,
    gamma0: Option<f64>,
    r0: Option<f64>,
    rhs: Option<String>,
    history: Option<String>,
    eps: Option<f64>,
) -> Result<Checks> {
    let pr = Problem::resolve(ctx, problem, Problem { alpha: 0.5, n: 64, m: 64, ..PROBLEM })?;
    let p = &mut ctx.params;
    let coeff = p.get("coeff", coeff, "rough".to_string())?;
    let gamma0 = p.get("gamma0", gamma0, 0.3)?;
    let r0 = p.get("r0", r0, 0.5)?;
    let rhs = p.get("rhs", rhs, "trig".to_string())?;
    let history = p.get("history", history, "dense".to_string())?;
    let eps = p.get("eps", eps, 1e-8)?;
    let seed = ctx.globals.seed;
    let a = order(pr.alpha)?;
    let (time, space) = pr.grids()?;
    let coeffs = match coeff.as_str() {
        "rough" => gen_rough_time(seed, pr.delta, pr.switches, time, space)?,
        "bmo" => gen_bmo_space(seed, &BmoSpec { n_switches: pr.switches, ..BmoSpec::new(pr.delta, gamma0, r0) }, a, time, space)?,
        "constant" => {
            let d = pr.d;
            let eye: Vec<f64> = (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
            CoefficientField::constant(time, space, &eye, pr.delta)?
        }
        other => bail!("unknown coefficient generator {other:?} (rough, bmo, constant)"),
    };
    let f = match rhs.as_str() {
        "trig" => random_rhs(seed, RhsSpec::Trig { modes: pr.modes }, time, space),
        "zero" => GridFunction::zeros(time, space, 1),
        "manufactured" => manufactured_rhs(&coeffs, a)?,
        other => bail!("unknown right-hand side {other:?} (trig, zero, manufactured)"),
    };
    let mut cfg = SolveConfig::new(a, coeffs.clone(), f);
    cfg.history = match history.as_str() {
        "dense" => HistoryMode::Dense,
        "compressed" => HistoryMode::Compressed { eps },
        other => bail!("unknown history mode {other:?} (dense, compressed)"),
    };
    let out = ctx.output()?;
    let rep = solve(&cfg)?;
    io::write_grid_function(&mut BufWriter::new(out.file("u.gfn")?.0), &rep.u)?;
    io::write_coefficients(&mut BufWriter::new(out.file("coeffs.gcf")?.0), &coeffs)?;
    let mut table = out.table("solve.csv", &["step", "t", "residual", "iterations", "max_abs"])?;
    for k in 1..=time.n {
        let max_abs = rep.u.time_slice(k).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        table.row(vec![k.to_string(), num(time.time(k)), num(rep.residuals[k - 1]), rep.iterations[k - 1].to_string(), num(max_abs)])?;
    }
    table.finish()?;
    println!("solved {} steps in {:.3}s, max |u| {:.4e}, support ratio {:.3e}", time.n, rep.wall_time.as_secs_f64(), rep.u.max_abs(), rep.support_ratio);
    let mut checks = Checks::default();
    let worst = rep.residuals.iter().copied().fold(0.0, f64::max);
    checks.add("linear solves", worst <= cfg.tol, format!("largest relative residual {worst:.2e}"));
    if rhs == "manufactured" {
        let err = rep.u.sub(&manufactured_exact(time, space)).max_abs();
        println!("max error against the exact solution {err:.4e}");
        checks.add("manufactured error", err <= 1e-2, format!("{err:.3e}"));
    }
    Ok(checks)
}

fn energy(ctx: &mut Ctx, alpha: Option<f64>, n: Option<usize>, trials: Option<usize>, width: Option<usize>) -> Result<Checks> {
    let p = &mut ctx.params;
    let alpha = p.get("alpha", alpha, 0.5)?;
    let n = p.get("n", n, 64usize)?;
    let trials = p.get("trials", trials, 10_000usize)?;
    let width = p.get("width", width, 3usize)?;
    if n < 1 || width < 1 {
        bail!("need n ≥ 1 and width ≥ 1");
    }
    let a = order(alpha)?;
    let out = ctx.output()?;
    let mut r = rng::stream(ctx.globals.seed, purpose::ENERGY);
    let mut table = out.table("energy.csv", &["trial", "integral", "min_margin", "scale", "violations"])?;
    let (mut failed, mut pointwise) = (0usize, 0usize);
    for trial in 0..trials {
        let mut vals = vec![0.0; width];
        for _ in 0..n * width {
            vals.push(rng::normal(&mut r) * 10f64.powf(r.gen_range(-3.0..3.0)));
        }
        let v = TimeSeries::new(0.0, 1.0 / n as f64, width, vals)?;
        let rep = energy_check(&v, a)?;
        if rep.integral < -1e-12 * rep.scale {
            failed += 1;
        }
        if !rep.violations.is_empty() {
            pointwise += 1;
        }
        table.row(vec![trial.to_string(), num(rep.integral), num(rep.min_margin), num(rep.scale), rep.violations.len().to_string()])?;
    }
    table.finish()?;
    println!("{trials} trials, aggregated failures {failed}, series with pointwise violations {pointwise}");
    let mut checks = Checks::default();
    checks.add("aggregated inequality", failed == 0, format!("{failed} of {trials} below -1e-12·scale"));
    checks.add("pointwise inequality", pointwise == 0, format!("{pointwise} of {trials} series"));
    Ok(checks)
}

fn apriori(ctx: &mut Ctx, problem: &ProblemArgs, seeds: Option<usize>, p: Option<f64>, refine: Option<bool>) -> Result<Checks> {
    let pr = Problem::resolve(ctx, problem, Problem { alpha: 0.5, ..PROBLEM })?;
    let count = ctx.params.get("seeds", seeds, 50usize)?;
    let p = ctx.params.get("p", p, 2.0)?;
    let refine = ctx.params.get("refine", refine, true)?;
    let base = ctx.globals.seed;
    let spec = EnsembleSpec {
        d: pr.d,
        alpha: order(pr.alpha)?,
        delta: pr.delta,
        n_switches: pr.switches,
        m: pr.m,
        n: pr.n,
        box_length: pr.l,
        t_end: pr.t_end,
        seeds: (base..base + count as u64).collect(),
        rhs: RhsSpec::Trig { modes: pr.modes },
    };
    let out = ctx.output()?;
    let coarse = apriori_constant(&spec, p)?;
    let fine = if refine { Some(apriori_constant(&spec.refined(), p)?) } else { None };
    let mut table = out.table("apriori.csv", &["resolution", "seed", "ratio"])?;
    for (rep, res) in std::iter::once((&coarse, spec.n)).chain(fine.as_ref().map(|f| (f, 2 * spec.n))) {
        for (seed, ratio) in &rep.ratios {
            table.row(vec![res.to_string(), seed.to_string(), opt(*ratio)])?;
        }
    }
    let path = table.finish()?;
    write_plot(&out, &path, PlotKind::Ratio, "apriori.svg")?;
    let mut checks = Checks::default();
    let all = coarse.ratios.iter().chain(fine.iter().flat_map(|f| f.ratios.iter()));
    checks.add("finite ratios", all.clone().all(|r| r.1.map_or(true, f64::is_finite)), format!("N̂ {:.4}", coarse.n_hat));
    checks.add("seed spread", coarse.spread <= 10.0, format!("max/min {:.3}", coarse.spread));
    if let Some(f) = &fine {
        let change = (f.n_hat / coarse.n_hat - 1.0).abs();
        println!("N̂ {:.4} -> {:.4}", coarse.n_hat, f.n_hat);
        checks.add("refinement", change <= 0.2, format!("N̂ changed by {:.1}%", 100.0 * change));
    } else {
        println!("N̂ {:.4}", coarse.n_hat);
    }
    Ok(checks)
}

#[allow(clippy::too_many_arguments)]
fn oscillation(
    ctx: &mut Ctx,
    alpha: Option<f64>,
    d: Option<usize>,
    m: Option<usize>,
    n: Option<usize>,
    delta: Option<f64>,
    gamma0: Option<f64>,
    r0: Option<f64>,
    profile: Option<String>,
    samples: Option<usize>,
) -> Result<Checks> {
    let p = &mut ctx.params;
    let alpha = p.get("alpha", alpha, 0.5)?;
    let d = p.get("d", d, 1usize)?;
    let m = p.get("m", m, 64usize)?;
    let n = p.get("n", n, 64usize)?;
    let delta = p.get("delta", delta, 0.2)?;
    let gamma0 = p.get("gamma0", gamma0, 0.3)?;
    let r0 = p.get("r0", r0, 0.5)?;
    let profile = p.get("profile", profile, "smooth".to_string())?;
    let samples = p.get("samples", samples, 100usize)?;
    let profile = match profile.as_str() {
        "smooth" => BmoProfile::Smooth { modes: 6 },
        "checkerboard" => BmoProfile::Checkerboard { period_cells: 4 },
        other => bail!("unknown profile {other:?} (smooth, checkerboard)"),
    };
    let a = order(alpha)?;
    let time = TimeGrid::uniform(1.0, n)?;
    let space = SpaceGrid::new(d, 1.0, m)?;
    let seed = ctx.globals.seed;
    let out = ctx.output()?;
    let c = gen_bmo_space(seed, &BmoSpec { profile, ..BmoSpec::new(delta, gamma0, r0) }, a, time, space)?;
    let osc = oscillation_sup(&c.a_component(0, 0), r0, a)?;
    println!("measured oscillation {:.4e} over {} cylinders (lattice lower bound)", osc.gamma_measured, osc.cylinders_examined);
    let tau = r0.powf(2.0 / alpha);
    if tau * 1.01 >= 1.0 {
        bail!("R0^(2/α) = {tau} leaves no interval longer than one block inside (0, 1)");
    }
    let comp = c.a_component(0, 0);
    let mut r = rng::stream(seed, purpose::SAMPLING);
    let mut table = out.table("oscillation.csv", &["sample", "x0", "t_lo", "t_hi", "long_interval", "gamma_blocks", "blocks", "pass"])?;
    let mut failures = 0;
    for i in 0..samples {
        let x0: Vec<f64> = (0..d).map(|_| r.gen_range(0.0..1.0)).collect();
        let len = r.gen_range(tau * 1.01..1.0);
        let lo = r.gen_range(0.0..(1.0 - len));
        let rep = doubling_check(&comp, &x0, (lo, lo + len), r0, a)?;
        let pass = rep.long_interval <= 2.0 * rep.gamma_blocks + 1e-12;
        failures += usize::from(!pass);
        let xs: Vec<String> = x0.iter().map(|v| num(*v)).collect();
        table.row(vec![i.to_string(), xs.join(" "), num(lo), num(lo + len), num(rep.long_interval), num(rep.gamma_blocks), rep.blocks.to_string(), pass.to_string()])?;
    }
    table.finish()?;
    let mut checks = Checks::default();
    checks.add("oscillation below gamma0", osc.gamma_measured <= gamma0, format!("{:.4e} vs {gamma0}", osc.gamma_measured));
    checks.add("doubling bound", failures == 0, format!("{failures} of {samples} samples exceed 2·block sup"));
    Ok(checks)
}

pub struct EmbedOverrides {
    pub d: Option<usize>,
    pub alpha: Option<f64>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub r: Option<f64>,
    pub theta: Option<f64>,
    pub t_end: Option<f64>,
}

fn embed(ctx: &mut Ctx, id: Option<String>, o: EmbedOverrides, seeds: Option<usize>, resolution: Option<usize>, refine: Option<bool>) -> Result<Checks> {
    let p = &mut ctx.params;
    let id = p.get("id", id, "all".to_string())?;
    let d = p.get_opt("d", o.d)?;
    let alpha = p.get_opt("alpha", o.alpha)?;
    let pp = p.get_opt("p", o.p)?;
    let q = p.get_opt("q", o.q)?;
    let r = p.get_opt("r", o.r)?;
    let theta = p.get_opt("theta", o.theta)?;
    let t_end = p.get_opt("t_end", o.t_end)?;
    let count = p.get("seeds", seeds, 100usize)?;
    let resolution = p.get("resolution", resolution, 0usize)?;
    let refine = p.get("refine", refine, true)?;
    let ids: Vec<InequalityId> = if id == "all" { InequalityId::ALL.to_vec() } else { vec![InequalityId::from_name(&id)?] };
    let mut jobs = Vec::new();
    for id in ids {
        let mut prm = id.default_params();
        prm.d = d.unwrap_or(prm.d);
        prm.alpha = alpha.unwrap_or(prm.alpha);
        prm.p = pp.unwrap_or(prm.p);
        prm.q = q.or(prm.q);
        prm.r = r.unwrap_or(prm.r);
        prm.theta = theta.unwrap_or(prm.theta);
        prm.t_end = t_end.unwrap_or(prm.t_end);
        check_hypothesis(id, &prm)?;
        let res = match resolution {
            0 if id.time_only() => 64,
            0 if prm.d == 1 => 32,
            0 => 16,
            r => r,
        };
        jobs.push((id, prm, res));
    }
    let base = ctx.globals.seed;
    let seeds: Vec<u64> = (base..base + count as u64).collect();
    let out = ctx.output()?;
    let mut table = out.table("ratios.csv", &["id", "seed", "exponents", "lhs", "rhs", "ratio", "resolution"])?;
    let mut checks = Checks::default();
    let write = |t: &mut crate::output::Table, rows: &[RatioRow]| -> Result<()> {
        for row in rows {
            t.row(vec![row.id.to_string(), row.seed.to_string(), row.exponents.clone(), num(row.lhs), num(row.rhs), opt(row.ratio), row.resolution.to_string()])?;
        }
        Ok(())
    };
    for (id, prm, res) in jobs {
        if refine {
            let rep = refinement_study(id, &prm, &seeds, res)?;
            write(&mut table, &rep.coarse.rows)?;
            write(&mut table, &rep.fine.rows)?;
            let finite = rep.coarse.rows.iter().chain(&rep.fine.rows).all(|r| r.ratio.map_or(true, f64::is_finite));
            println!("{id}: max ratio {:.4} -> {:.4}", rep.coarse.max_ratio, rep.fine.max_ratio);
            checks.add(&format!("{id} finite"), finite, "");
            checks.add(&format!("{id} refinement"), rep.growth <= 2.0, format!("growth {:.3}", rep.growth));
        } else {
            let rep = verify_inequality(id, &prm, &seeds, res)?;
            write(&mut table, &rep.rows)?;
            println!("{id}: max ratio {:.4}, median {:.4}", rep.max_ratio, rep.median);
            checks.add(&format!("{id} finite"), rep.rows.iter().all(|r| r.ratio.map_or(true, f64::is_finite)), "");
        }
    }
    let path = table.finish()?;
    write_plot(&out, &path, PlotKind::Ratio, "ratios.svg")?;
    Ok(checks)
}

fn ladder(ctx: &mut Ctx, d: Option<usize>, alpha: Option<f64>, p: Option<f64>) -> Result<Checks> {
    let d = ctx.params.get("d", d, 1usize)?;
    let alpha = ctx.params.get("alpha", alpha, 0.5)?;
    let p = ctx.params.get("p", p, 2.0)?;
    let out = ctx.output()?;
    let state = exponent_ladder(d, alpha, p)?;
    let mut table = out.table("ladder.csv", &["step", "p", "case", "upper", "p1"])?;
    for (i, s) in state.steps.iter().enumerate() {
        table.row(vec![(i + 1).to_string(), num(s.p), s.case.label().to_string(), num(s.interval.1), num(s.p1)])?;
        println!("step {}: p = {:.4} ({}) -> p1 = {}", i + 1, s.p, s.case.label(), s.p1);
    }
    table.finish()?;
    let bound = ladder_step_bound(d, alpha, p);
    let inc = min_increment(d, alpha);
    let mut checks = Checks::default();
    checks.add("terminates", state.terminated, format!("{} steps", state.steps.len()));
    checks.add("step bound", state.steps.len() <= bound, format!("bound {bound}"));
    checks.add("increments", state.steps.iter().all(|s| s.p1 - s.p >= inc), format!("minimum increment {inc:.4}"));
    Ok(checks)
}

fn shape_of(s: &str) -> Result<FamilyShape> {
    Ok(match s {
        "square" => FamilyShape::Square,
        "rectangular" => FamilyShape::Rectangular,
        "two-sided" => FamilyShape::TwoSided,
        other => bail!("unknown cylinder shape {other:?} (square, rectangular, two-sided)"),
    })
}

fn maximal_cmd(ctx: &mut Ctx, problem: &ProblemArgs, shape: Option<String>, p: Option<f64>) -> Result<Checks> {
    let pr = Problem::resolve(ctx, problem, PROBLEM)?;
    let shape = shape_of(&ctx.params.get("shape", shape, "square".to_string())?)?;
    let p = ctx.params.get("p", p, 2.0)?;
    let out = ctx.output()?;
    let (_, _, u) = pr.run(ctx.globals.seed)?;
    let a = order(pr.alpha)?;
    let fam = CylinderFamily::dyadic(shape, a, &u.time, &u.space);
    let g = select(&u, Selector::Hessian)?.pad_past(fam.padding(u.time.h));
    let mg = maximal(&g, &fam, false)?;
    let smg = maximal(&g, &fam, true)?;
    io::write_grid_function(&mut BufWriter::new(out.file("maximal.gfn")?.0), &mg)?;
    let spec = NormSpec::full(p)?;
    let gn = lp_norm(&g, &spec)?;
    let mut table = out.table("maximal.csv", &["operator", "p", "g_norm", "mg_norm", "ratio"])?;
    for (name, field) in [("M", &mg), ("SM", &smg)] {
        let n = lp_norm(field, &spec)?;
        table.row(vec![name.to_string(), num(p), num(gn), num(n), num(n / gn)])?;
        println!("{name}: ‖Mg‖/‖g‖ = {:.4}", n / gn);
    }
    table.finish()?;
    let below = mg.values().iter().zip(smg.values()).all(|(x, y)| *x <= y + 1e-12);
    let mut checks = Checks::default();
    checks.add("M below SM", below, "");
    Ok(checks)
}

fn layercake(ctx: &mut Ctx, problem: &ProblemArgs, runs: Option<usize>, ps: Option<String>) -> Result<Checks> {
    let pr = Problem::resolve(ctx, problem, Problem { n: 64, m: 64, ..PROBLEM })?;
    let runs = ctx.params.get("runs", runs, 5usize)?;
    let ps = ctx.params.get_list("p", ps, "2,3")?;
    let out = ctx.output()?;
    let base = ctx.globals.seed;
    let mut table = out.table("layercake.csv", &["seed", "p", "lhs", "rhs", "gap"])?;
    let mut worst: f64 = 0.0;
    for seed in base..base + runs as u64 {
        let (_, _, u) = pr.run(seed)?;
        for &p in &ps {
            let lc = layer_cake(&u, p)?;
            worst = worst.max(lc.gap);
            table.row(vec![seed.to_string(), num(p), num(lc.lhs), num(lc.rhs), num(lc.gap)])?;
        }
    }
    table.finish()?;
    let mut checks = Checks::default();
    checks.add("layer cake gap", worst <= 0.02, format!("largest relative gap {worst:.3e}"));
    Ok(checks)
}

fn decompose_cmd(ctx: &mut Ctx, problem: &ProblemArgs, t0: Option<f64>, x0: Option<String>, r: Option<f64>, p: Option<f64>) -> Result<Checks> {
    let pr = Problem::resolve(ctx, problem, Problem { alpha: 0.9, n: 64, m: 64, ..PROBLEM })?;
    let t0 = ctx.params.get("t0", t0, pr.t_end)?;
    let center = vec![num(0.5 * pr.l); pr.d].join(",");
    let x0 = ctx.params.get_list("x0", x0, &center)?;
    let r = ctx.params.get("r", r, 0.25)?;
    let p = ctx.params.get("p", p, 2.0)?;
    if x0.len() != pr.d {
        bail!("x0 has {} components, expected d = {}", x0.len(), pr.d);
    }
    let out = ctx.output()?;
    let (c, f, u) = pr.run(ctx.globals.seed)?;
    let rep = decompose(&u, &f, &c, order(pr.alpha)?, &DecomposeSpec { t0, x0, r, p })?;
    let mut table = out.table(
        "decompose.csv",
        &["p", "p1", "w_lhs", "f_term", "w_ratio", "v_lhs", "v_rhs", "v_ratio", "v_residual", "tail_terms", "tail_remainder"],
    )?;
    table.row(vec![
        num(p),
        num(rep.p1),
        num(rep.w_lhs),
        num(rep.f_term),
        num(rep.w_ratio),
        num(rep.v_lhs),
        num(rep.v_rhs),
        num(rep.v_ratio),
        num(rep.v_residual),
        rep.tail_terms.len().to_string(),
        num(rep.tail_remainder),
    ])?;
    table.finish()?;
    println!("w ratio {:.4}, v ratio {:.4} (p1 = {}), v residual {:.2e}", rep.w_ratio, rep.v_ratio, rep.p1, rep.v_residual);
    let mut checks = Checks::default();
    checks.add("finite ratios", rep.w_ratio.is_finite() && rep.v_ratio.is_finite(), "");
    let tol = 1e-6 * u.max_abs().max(1.0);
    checks.add("v solves the homogeneous equation", rep.v_residual <= tol, format!("{:.2e}", rep.v_residual));
    Ok(checks)
}

#[allow(clippy::too_many_arguments)]
fn abset(
    ctx: &mut Ctx,
    problem: &ProblemArgs,
    p: Option<f64>,
    gamma: Option<f64>,
    kappa: Option<f64>,
    gamma0: Option<f64>,
    mu: Option<f64>,
) -> Result<Checks> {
    let pr = Problem::resolve(ctx, problem, PROBLEM)?;
    let p = ctx.params.get("p", p, 2.0)?;
    let gamma = ctx.params.get("gamma", gamma, 0.5)?;
    let kappa = ctx.params.get_opt("kappa", kappa)?;
    let gamma0 = ctx.params.get_opt("gamma0", gamma0)?;
    let mu = ctx.params.get("mu", mu, 2.0)?;
    let out = ctx.output()?;
    let (_, f, u) = pr.run(ctx.globals.seed)?;
    let bmo = gamma0.map(|g0| BmoTerm { gamma0: g0, mu });
    let fields = LevelFields::new(&u, &f, order(pr.alpha)?, p, gamma, bmo)?;
    let mut checks = Checks::default();
    let kappa = match kappa {
        Some(k) => k,
        None => match fit_kappa(&fields)? {
            Some(k) => k,
            None => {
                checks.add("kappa fitted", false, "no grid value satisfies the implication");
                return Ok(checks);
            }
        },
    };
    let rep = ab_inequality(&fields, kappa)?;
    let mut table = out.table("levelset.csv", &["s", "a_measure", "b_measure", "ratio"])?;
    for i in 0..rep.thresholds.len() {
        table.row(vec![num(rep.thresholds[i]), num(rep.a_measures[i]), num(rep.b_measures[i]), opt(rep.ratios[i])])?;
    }
    let path = table.finish()?;
    write_plot(&out, &path, PlotKind::Levelset, "levelset.svg")?;
    println!("κ = {kappa}, N̂ = {:.4}", rep.n_hat);
    checks.add("finite N̂", rep.n_hat.is_finite(), format!("{:.4}", rep.n_hat));
    checks.add("B nonempty where A is", rep.violations.is_empty(), format!("{} thresholds", rep.violations.len()));
    Ok(checks)
}

fn inkspots(ctx: &mut Ctx, d: Option<usize>, alpha: Option<f64>, m: Option<usize>, n: Option<usize>, instances: Option<usize>) -> Result<Checks> {
    let d = ctx.params.get("d", d, 1usize)?;
    let alpha = ctx.params.get("alpha", alpha, 0.5)?;
    let m = ctx.params.get("m", m, if d == 1 { 32 } else { 12 })?;
    let n = ctx.params.get("n", n, 24usize)?;
    let instances = ctx.params.get("instances", instances, 200usize)?;
    let a = order(alpha)?;
    let space = SpaceGrid::new(d, 1.0, m)?;
    let base = TimeGrid::uniform(1.0, n)?;
    let fam = CylinderFamily::dyadic(FamilyShape::TwoSided, a, &base, &space);
    let pad = fam.padding(base.h);
    let time = TimeGrid::new(-(pad as f64) * base.h, base.h, base.n + pad)?;
    let out = ctx.output()?;
    let seed = ctx.globals.seed;
    let mut r = rng::stream(seed, purpose::SYNTHETIC_SETS);
    let mut table = out.table("inkspots.csv", &["instance", "gamma", "e_measure", "f_measure", "hypothesis", "n_hat", "bound", "within"])?;
    let (mut bad_hyp, mut over) = (0, 0);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let gamma = r.gen_range(0.1..0.9);
        let e = synthetic_e(seed.wrapping_add(i as u64), time, space);
        let f = covering_closure(&e, gamma, &fam)?;
        let rep = ink_spots(&e, &f, gamma, &fam)?;
        bad_hyp += usize::from(!rep.hypothesis_holds);
        over += usize::from(!rep.within_bound);
        worst = worst.max(rep.n_hat / rep.bound);
        table.row(vec![
            i.to_string(),
            num(gamma),
            num(e.measure()),
            num(f.measure()),
            rep.hypothesis_holds.to_string(),
            num(rep.n_hat),
            num(rep.bound),
            rep.within_bound.to_string(),
        ])?;
    }
    table.finish()?;
    println!("{instances} instances, largest N̂/bound {worst:.3e}");
    let mut checks = Checks::default();
    checks.add("hypothesis", bad_hyp == 0, format!("{bad_hyp} instances fail the scan"));
    checks.add("constant", over == 0, format!("{over} instances above 2·5^(d+2/α)·1.1"));
    Ok(checks)
}

fn convergence(ctx: &mut Ctx, alpha: Option<f64>, switches: Option<usize>, delta: Option<f64>, levels: Option<usize>, n0: Option<usize>) -> Result<Checks> {
    let alpha = ctx.params.get("alpha", alpha, 0.5)?;
    let switches = ctx.params.get("switches", switches, 8usize)?;
    let delta = ctx.params.get("delta", delta, 0.2)?;
    let levels = ctx.params.get("levels", levels, 3usize)?;
    let n0 = ctx.params.get("n0", n0, 64usize)?;
    if levels < 2 {
        bail!("need at least 2 levels, got {levels}");
    }
    let a = order(alpha)?;
    let out = ctx.output()?;
    let seed = ctx.globals.seed;
    let mut table = out.table("convergence.csv", &["level", "n", "h", "error", "order"])?;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for level in 0..levels {
        let n = n0 << level;
        let time = TimeGrid::uniform(1.0, n)?;
        let space = SpaceGrid::new(1, 1.0, n)?;
        let coeffs = gen_rough_time(seed, delta, switches, time, space)?;
        let f = manufactured_rhs(&coeffs, a)?;
        let u = solve(&SolveConfig::new(a, coeffs, f))?.u;
        let err = u.sub(&manufactured_exact(time, space)).max_abs();
        let rate = points.last().map(|&(_, e)| (e / err).log2());
        table.row(vec![level.to_string(), n.to_string(), num(time.h), num(err), opt(rate)])?;
        points.push((time.h, err));
    }
    let path = table.finish()?;
    write_plot(&out, &path, PlotKind::Convergence, "convergence.svg")?;
    let slope = loglog_slope(&points).unwrap_or(f64::NAN);
    let last = points.last().unwrap().1;
    println!("joint order {slope:.3}, finest error {last:.3e}");
    let mut checks = Checks::default();
    checks.add("order", slope >= 1.0, format!("{slope:.3}"));
    checks.add("finest error", last <= 1e-2, format!("{last:.3e}"));
    Ok(checks)
}

fn plot(table: &Path, kind: &str, output: Option<&Path>) -> Result<Checks> {
    let kind: PlotKind = kind.parse()?;
    let text = std::fs::read_to_string(table).with_context(|| format!("cannot read {}", table.display()))?;
    let svg = emit_plot(&text, kind)?;
    let target = output.map(Path::to_path_buf).unwrap_or_else(|| table.with_extension("svg"));
    std::fs::write(&target, svg).with_context(|| format!("cannot write {}", target.display()))?;
    println!("wrote {}", target.display());
    Ok(Checks::default())
}
