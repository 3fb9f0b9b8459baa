//! Small dense and sparse linear algebra used by the solver.

use crate::error::{Error, Result};

/// Solves a cyclic tridiagonal system `lower[i] x[i-1] + diag[i] x[i] +
/// upper[i] x[i+1] = rhs[i]` with indices taken modulo `n`.
pub fn solve_cyclic_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n < 3 || lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(Error::Argument(format!("cyclic tridiagonal system needs n ≥ 3 matching bands, got n = {n}")));
    }
    // Sherman–Morrison: A = T + u vᵀ with u = (γ, 0, …, 0, c_{n-1}), v = (1, 0, …, 0, a_0 / γ)
    let alpha = upper[n - 1];
    let beta = lower[0];
    let gamma = -diag[0];
    let mut d = diag.to_vec();
    d[0] -= gamma;
    d[n - 1] -= alpha * beta / gamma;
    let x = thomas(lower, &d, upper, rhs)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = thomas(lower, &d, upper, &u)?;
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    Ok(x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect())
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut piv = diag[0];
    if piv == 0.0 {
        return Err(Error::Solver { step: 0, message: "zero pivot in tridiagonal solve".into(), trace: vec![] });
    }
    c[0] = upper[0] / piv;
    x[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - lower[i] * c[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return Err(Error::Solver { step: 0, message: format!("zero pivot at row {i}"), trace: vec![] });
        }
        c[i] = upper[i] / piv;
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                if indices.len() > *indptr.last().unwrap() && *indices.last().unwrap() == c {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix { n, indptr, indices, data }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.data[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `s I + scale · self`.
    pub fn shifted(&self, s: f64, scale: f64) -> CsrMatrix {
        let rows = (0..self.n)
            .map(|i| {
                let mut r: Vec<(usize, f64)> = self.row(i).map(|(j, v)| (j, scale * v)).collect();
                r.push((i, s));
                r
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        m
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone)]
pub struct IterativeSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned BiCGSTAB. `trace` in the error carries the
/// relative residual of every iteration.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<IterativeSolution> {
    let n = a.n;
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(IterativeSolution { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let dinv: Vec<f64> = a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&dinv).map(|(x, d)| x * d).collect() };
    let mut x = x0.map_or_else(|| vec![0.0; n], |v| v.to_vec());
    let ax = a.matvec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut trace = Vec::new();
    let mut res = norm(&r) / bnorm;
    if res <= tol {
        return Ok(IterativeSolution { x, iterations: 0, relative_residual: res });
    }
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = precond(&p);
        v = a.matvec(&y);
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
        if norm(&s) / bnorm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            res = norm(&s) / bnorm;
            trace.push(res);
            return Ok(IterativeSolution { x, iterations: it, relative_residual: res });
        }
        let z = precond(&s);
        let t = a.matvec(&z);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r) / bnorm;
        trace.push(res);
        if res <= tol {
            // confirm with a true residual
            let ax = a.matvec(&x);
            let true_res = norm(&b.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>()) / bnorm;
            if true_res <= 10.0 * tol {
                return Ok(IterativeSolution { x, iterations: it, relative_residual: true_res });
            }
        }
        if omega == 0.0 || !res.is_finite() {
            break;
        }
    }
    Err(Error::Solver { step: 0, message: format!("BiCGSTAB stalled at relative residual {res:.3e}"), trace })
}

/// Eigenvalues (ascending) of a small symmetric matrix by cyclic Jacobi
/// rotations. `a` is row-major `n × n`.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * n + j].powi(2)).sum();
        let scale: f64 = m.iter().map(|v| v * v).sum();
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cyclic_tridiagonal_matches_dense() {
        let n = 7;
        let lower: Vec<f64> = (0..n).map(|i| -1.0 - 0.1 * i as f64).collect();
        let upper: Vec<f64> = (0..n).map(|i| -0.5 + 0.05 * i as f64).collect();
        let diag: Vec<f64> = (0..n).map(|i| 4.0 + i as f64).collect();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let rhs: Vec<f64> = (0..n)
            .map(|i| lower[i] * x_true[(i + n - 1) % n] + diag[i] * x_true[i] + upper[i] * x_true[(i + 1) % n])
            .collect();
        let x = solve_cyclic_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        for (a, b) in x.iter().zip(&x_true) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let n = 50;
        let rows = (0..n)
            .map(|i| vec![(i, 4.0), ((i + 1) % n, -1.3), ((i + n - 1) % n, -0.7), ((i + 7) % n, 0.2)])
            .collect();
        let a = CsrMatrix::from_rows(rows);
        let x_true: Vec<f64> = (0..n).map(|i| (0.3 * i as f64).cos()).collect();
        let b = a.matvec(&x_true);
        let sol = bicgstab(&a, &b, None, 1e-12, 500).unwrap();
        for (a, b) in sol.x.iter().zip(&x_true) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn jacobi_eigenvalues() {
        let a = [2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0];
        let ev = symmetric_eigenvalues(&a, 3);
        assert_relative_eq!(ev[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(ev[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(ev[2], 5.0, epsilon = 1e-12);
        assert_eq!(symmetric_eigenvalues(&[3.0], 1), vec![3.0]);
    }
}
