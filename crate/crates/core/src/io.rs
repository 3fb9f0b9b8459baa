//! Binary and CSV formats for lattice data.
//!
//! Grid function layout (little endian):
//! `"GFN1"`, `u32 dim`, `u64 n`, `u64 m`, `f64 h`, `f64 L`, `f64 t0`,
//! `u32 components`, then `(n+1)·m^dim·components` `f64` values in node-major
//! order. Coefficient fields prepend `"GCF1"`, `f64 δ`, `u8 time_only` and
//! store `a`, `b`, `c` as three grid function blocks. Node sets use `"NDS1"`,
//! the same lattice header without components, `u64 count` and the sorted
//! `u64` indices.

use std::io::{self, Read, Write};

use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::grids::{GridFunction, SpaceGrid, TimeGrid};
use crate::levelset::NodeSet;

const GRID_MAGIC: &[u8; 4] = b"GFN1";
const COEFF_MAGIC: &[u8; 4] = b"GCF1";
const NODES_MAGIC: &[u8; 4] = b"NDS1";

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => bad("truncated input"),
            _ => Error::from(e),
        })?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.bytes::<4>()?;
        if &got != want {
            return Err(bad(format!("expected magic {:?}, found {:?}", String::from_utf8_lossy(want), String::from_utf8_lossy(&got))));
        }
        Ok(())
    }
}

fn write_lattice(w: &mut impl Write, time: &TimeGrid, space: &SpaceGrid) -> Result<()> {
    w.write_all(&(space.dim() as u32).to_le_bytes())?;
    w.write_all(&(time.n as u64).to_le_bytes())?;
    w.write_all(&(space.cells() as u64).to_le_bytes())?;
    w.write_all(&time.h.to_le_bytes())?;
    w.write_all(&space.box_length().to_le_bytes())?;
    w.write_all(&time.t0.to_le_bytes())?;
    Ok(())
}

fn read_lattice<R: Read>(r: &mut Reader<R>) -> Result<(TimeGrid, SpaceGrid)> {
    let dim = r.u32()? as usize;
    let n = r.u64()? as usize;
    let m = r.u64()? as usize;
    let h = r.f64()?;
    let l = r.f64()?;
    let t0 = r.f64()?;
    let space = SpaceGrid::new(dim, l, m).map_err(|e| bad(format!("bad lattice header: {e}")))?;
    let time = TimeGrid::new(t0, h, n).map_err(|e| bad(format!("bad lattice header: {e}")))?;
    Ok((time, space))
}

pub fn write_grid_function(w: &mut impl Write, g: &GridFunction) -> Result<()> {
    w.write_all(GRID_MAGIC)?;
    write_lattice(w, &g.time, &g.space)?;
    w.write_all(&(g.components as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * g.values().len());
    for v in g.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_grid_inner<R: Read>(r: &mut Reader<R>) -> Result<GridFunction> {
    r.magic(GRID_MAGIC)?;
    let (time, space) = read_lattice(r)?;
    let comps = r.u32()? as usize;
    let len = time
        .nodes()
        .checked_mul(space.num_nodes())
        .and_then(|x| x.checked_mul(comps))
        .ok_or_else(|| bad("value count overflows"))?;
    let mut raw = vec![0u8; len.checked_mul(8).ok_or_else(|| bad("value count overflows"))?];
    r.inner.read_exact(&mut raw).map_err(|_| bad(format!("expected {len} values")))?;
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    GridFunction::new(time, space, comps, values).map_err(|e| bad(e.to_string()))
}

pub fn read_grid_function(r: impl Read) -> Result<GridFunction> {
    read_grid_inner(&mut Reader { inner: r })
}

pub fn write_coefficients(w: &mut impl Write, c: &CoefficientField) -> Result<()> {
    w.write_all(COEFF_MAGIC)?;
    w.write_all(&c.delta.to_le_bytes())?;
    w.write_all(&[c.time_only as u8])?;
    for g in [&c.a, &c.b, &c.c] {
        write_grid_function(w, g)?;
    }
    Ok(())
}

pub fn read_coefficients(r: impl Read) -> Result<CoefficientField> {
    let mut r = Reader { inner: r };
    r.magic(COEFF_MAGIC)?;
    let delta = r.f64()?;
    let time_only = r.u8()? != 0;
    let a = read_grid_inner(&mut r)?;
    let b = read_grid_inner(&mut r)?;
    let c = read_grid_inner(&mut r)?;
    let d = a.space.dim();
    if a.components != d * d || b.components != d || c.components != 1 || a.time != b.time || a.time != c.time || a.space != b.space || a.space != c.space {
        return Err(bad("coefficient blocks do not match"));
    }
    Ok(CoefficientField { a, b, c, delta, time_only })
}

pub fn write_node_set(w: &mut impl Write, set: &NodeSet) -> Result<()> {
    w.write_all(NODES_MAGIC)?;
    write_lattice(w, &set.time, &set.space)?;
    let idx = set.indices();
    w.write_all(&(idx.len() as u64).to_le_bytes())?;
    for i in idx {
        w.write_all(&(i as u64).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_node_set(r: impl Read) -> Result<NodeSet> {
    let mut r = Reader { inner: r };
    r.magic(NODES_MAGIC)?;
    let (time, space) = read_lattice(&mut r)?;
    let count = r.u64()? as usize;
    let mut idx = Vec::with_capacity(count.min(1 << 24));
    let mut last = None;
    for _ in 0..count {
        let i = r.u64()? as usize;
        if last.is_some_and(|l| i <= l) {
            return Err(bad("node indices are not strictly increasing"));
        }
        last = Some(i);
        idx.push(i);
    }
    NodeSet::from_indices(time, space, &idx).map_err(|e| bad(e.to_string()))
}

/// One-line description of a node set.
pub fn node_set_summary(set: &NodeSet) -> String {
    let idx = set.indices();
    let m = set.space.num_nodes();
    let span = match (idx.first(), idx.last()) {
        (Some(a), Some(b)) => format!("t in [{}, {}]", set.time.time(a / m), set.time.time(b / m)),
        _ => "empty".to_string(),
    };
    format!(
        "nodes={} measure={:.6e} lattice=d{}:n{}:m{} {}",
        idx.len(),
        set.measure(),
        set.space.dim(),
        set.time.n,
        set.space.cells(),
        span
    )
}

/// Largest lattice [`write_grid_csv`] accepts.
pub const CSV_MAX_NODES: usize = 1 << 20;

/// Rows `t, x1..xd, c0..` for every node.
pub fn write_grid_csv(w: &mut impl Write, g: &GridFunction) -> Result<()> {
    let total = g.time.nodes() * g.space.num_nodes();
    if total > CSV_MAX_NODES {
        return Err(Error::Capacity(format!("{total} nodes exceed the CSV limit of {CSV_MAX_NODES}")));
    }
    let d = g.space.dim();
    let mut head: Vec<String> = vec!["t".into()];
    head.extend((1..=d).map(|i| format!("x{i}")));
    head.extend((0..g.components).map(|c| format!("c{c}")));
    writeln!(w, "{}", head.join(","))?;
    for k in 0..g.time.nodes() {
        for s in 0..g.space.num_nodes() {
            let x = g.space.coords(s);
            let mut row = vec![format!("{}", g.time.time(k))];
            row.extend(x[..d].iter().map(|v| format!("{v}")));
            row.extend((0..g.components).map(|c| format!("{}", g.get(k, s, c))));
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}
