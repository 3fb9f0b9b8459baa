//! Small SVG renderer for the three table kinds. Output depends only on the
//! table contents, so identical input gives identical bytes.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// `h` against `error`, log-log, with the fitted slope.
    Convergence,
    /// `ratio` per row.
    Ratio,
    /// `a_measure` and `b_measure` against `s`, log-log.
    Levelset,
}

impl std::str::FromStr for PlotKind {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convergence" => Ok(PlotKind::Convergence),
            "ratio" => Ok(PlotKind::Ratio),
            "levelset" => Ok(PlotKind::Levelset),
            _ => bail!("unknown plot kind {s:?} (convergence, ratio, levelset)"),
        }
    }
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 2] = ["#1f5fa8", "#c0392b"];

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

fn columns(text: &str, want: &[&str]) -> Result<Vec<Vec<Option<f64>>>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr.headers().context("table has no header row")?.clone();
    let idx: Vec<usize> = want
        .iter()
        .map(|w| headers.iter().position(|h| h == *w).with_context(|| format!("schema mismatch: table lacks column {w:?}")))
        .collect::<Result<_>>()?;
    let mut cols = vec![Vec::new(); want.len()];
    for rec in rdr.records() {
        let rec = rec?;
        for (c, &i) in idx.iter().enumerate() {
            cols[c].push(rec.get(i).and_then(|s| s.trim().parse::<f64>().ok()));
        }
    }
    Ok(cols)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(vals: impl Iterator<Item = f64>, log: bool) -> Option<Axis> {
        let vals: Vec<f64> = vals.filter(|v| v.is_finite() && (!log || *v > 0.0)).map(|v| if log { v.log10() } else { v }).collect();
        if vals.is_empty() {
            return None;
        }
        let (mut lo, mut hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        } else if !log && lo > 0.0 {
            lo = 0.0;
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        Some(Axis { log, lo, hi })
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo as i32, self.hi as i32);
            let step = ((b - a) / 8).max(1);
            (a..=b).step_by(step as usize).map(|e| (10f64.powi(e), format!("1e{e}"))).collect()
        } else {
            (0..=4).map(|i| {
                let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                (v, format!("{v:.3}"))
            }).collect()
        }
    }
}

fn render(title: &str, xlabel: &str, ylabel: &str, series: &[Series], logx: bool, logy: bool, note: Option<String>) -> String {
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(s, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, LEFT + pw / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#, TOP + ph / 2.0, TOP + ph / 2.0);
    let xa = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), logx);
    let ya = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), logy);
    if let (Some(xa), Some(ya)) = (xa, ya) {
        let px = |v: f64| LEFT + xa.frac(v) * pw;
        let py = |v: f64| TOP + (1.0 - ya.frac(v)) * ph;
        for (v, label) in xa.ticks() {
            let x = px(v);
            let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#333"/>"##, TOP + ph, TOP + ph + 5.0);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"#, TOP + ph + 18.0);
        }
        for (v, label) in ya.ticks() {
            let y = py(v);
            let _ = writeln!(s, r##"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/>"##, LEFT - 5.0);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, LEFT - 8.0, y + 4.0);
        }
        for (i, ser) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<(f64, f64)> = ser
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite() && (!logx || p.0 > 0.0) && (!logy || p.1 > 0.0))
                .map(|p| (px(p.0), py(p.1)))
                .collect();
            if pts.len() > 1 {
                let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", p.0, p.1)).collect();
                let _ = writeln!(s, r#"<polyline class="series" fill="none" stroke="{color}" points="{}"/>"#, path.join(" "));
            }
            for p in &pts {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, p.0, p.1);
            }
            let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, LEFT + 10.0, TOP + 16.0 + 14.0 * i as f64, ser.name);
        }
    }
    if let Some(note) = note {
        let _ = writeln!(s, r#"<text id="slope" x="{}" y="{}" text-anchor="end">{note}</text>"#, W - RIGHT - 10.0, TOP + 16.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Renders a CSV table as SVG.
pub fn emit_plot(table: &str, kind: PlotKind) -> Result<String> {
    Ok(match kind {
        PlotKind::Convergence => {
            let cols = columns(table, &["h", "error"])?;
            let points: Vec<(f64, f64)> = cols[0].iter().zip(&cols[1]).filter_map(|(x, y)| Some((x.as_ref().copied()?, y.as_ref().copied()?))).collect();
            let note = loglog_slope(&points).map(|k| format!("slope {k:.3}"));
            render("convergence", "h", "error", &[Series { name: "error".into(), points }], true, true, note)
        }
        PlotKind::Ratio => {
            let cols = columns(table, &["ratio"])?;
            let points: Vec<(f64, f64)> = cols[0].iter().enumerate().filter_map(|(i, y)| Some(((i + 1) as f64, (*y)?))).collect();
            render("ratios", "row", "ratio", &[Series { name: "ratio".into(), points }], false, false, None)
        }
        PlotKind::Levelset => {
            let cols = columns(table, &["s", "a_measure", "b_measure"])?;
            let pick = |c: usize| -> Vec<(f64, f64)> { cols[0].iter().zip(&cols[c]).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect() };
            let series = [Series { name: "|A(κs)|".into(), points: pick(1) }, Series { name: "|B(s)|".into(), points: pick(2) }];
            render("level sets", "s", "measure", &series, true, true, None)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025].iter().map(|&h: &f64| (h, 3.0 * h.powf(1.5))).collect();
        assert!((loglog_slope(&pts).unwrap() - 1.5).abs() < 1e-12);
        assert!(loglog_slope(&pts[..1]).is_none());
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let err = emit_plot("x,y\n1,2\n", PlotKind::Convergence).unwrap_err();
        assert!(err.to_string().contains("schema mismatch"));
    }
}
