//! Compressed sparse row matrices and the linear solves used by the time stepper.
//!
//! The systems solved here are diagonally dominant M-matrices (or symmetric
//! positive definite stiffness matrices), so Gaussian elimination needs no
//! pivoting. Unknowns are renumbered by reverse Cuthill-McKee and factored in
//! band storage; very wide bands fall back to Jacobi-preconditioned BiCGSTAB.

use std::collections::VecDeque;

use crate::error::{HjbError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            rows[i].push((j, v));
        }
        Self::from_rows(ncols, rows)
    }

    pub(crate) fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> CsrMatrix {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> CsrMatrix {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> CsrMatrix {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(HjbError::DimensionMismatch {
                expected: self.ncols,
                found: x.len(),
            });
        }
        Ok((0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect())
    }

    /// Leading square block `[0..n) x [0..n)`.
    pub fn leading_block(&self, n: usize) -> CsrMatrix {
        let rows = (0..n.min(self.nrows))
            .map(|i| self.row(i).filter(|&(j, _)| j < n).collect())
            .collect();
        Self::from_rows(n, rows)
    }

    /// `scale * A + Id` for a square matrix.
    pub fn scaled_plus_identity(&self, scale: f64) -> CsrMatrix {
        let rows = (0..self.nrows)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = self.row(i).map(|(j, v)| (j, scale * v)).collect();
                row.push((i, 1.0));
                row
            })
            .collect();
        Self::from_rows(self.ncols, rows)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                out[i][j] += v;
            }
        }
        out
    }
}

pub(crate) fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn residual_norm(m: &CsrMatrix, x: &[f64], rhs: &[f64]) -> f64 {
    (0..m.nrows)
        .map(|i| (m.row(i).map(|(j, v)| v * x[j]).sum::<f64>() - rhs[i]).abs())
        .fold(0.0, f64::max)
}

/// Reverse Cuthill-McKee ordering of the symmetrised pattern.
/// Returns `perm` with `perm[new] = old`.
fn reverse_cuthill_mckee(m: &CsrMatrix) -> Vec<usize> {
    let n = m.nrows;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, _) in m.row(i) {
            if j != i && j < n {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (adj[i].len(), i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (adj[w].len(), w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// LU factors of a square matrix in band storage, unknowns permuted by RCM.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    bw: usize,
    perm: Vec<usize>,
    inv: Vec<usize>,
    band: Vec<f64>,
}

/// Upper bound on band storage (entries) before switching to the iterative path.
const MAX_BAND_ENTRIES: usize = 60_000_000;

impl BandedLu {
    pub fn factor(m: &CsrMatrix) -> Result<BandedLu> {
        let n = m.nrows;
        if m.ncols != n {
            return Err(HjbError::DimensionMismatch {
                expected: n,
                found: m.ncols,
            });
        }
        let perm = reverse_cuthill_mckee(m);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut bw = 0;
        for i in 0..n {
            for (j, _) in m.row(i) {
                bw = bw.max(inv[i].abs_diff(inv[j]));
            }
        }
        let width = 2 * bw + 1;
        if n.saturating_mul(width) > MAX_BAND_ENTRIES {
            return Err(HjbError::LinearSolver {
                message: format!("band too wide for direct solve (n = {n}, bandwidth = {bw})"),
                residual: f64::NAN,
            });
        }
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in m.row(i) {
                band[inv[i] * width + (inv[j] + bw - inv[i])] += v;
            }
        }
        let at = |r: usize, c: usize| r * width + (c + bw - r);
        for k in 0..n {
            let pivot = band[at(k, k)];
            if !(pivot.abs() > 0.0) || !pivot.is_finite() {
                return Err(HjbError::MMatrix(format!(
                    "zero pivot at unknown {} during elimination",
                    perm[k]
                )));
            }
            let last = (k + bw).min(n - 1);
            for i in (k + 1)..=last {
                let l = band[at(i, k)] / pivot;
                if l == 0.0 {
                    continue;
                }
                band[at(i, k)] = l;
                for j in (k + 1)..=last {
                    band[at(i, j)] -= l * band[at(k, j)];
                }
            }
        }
        Ok(BandedLu {
            n,
            bw,
            perm,
            inv,
            band,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let width = 2 * bw + 1;
        let at = |r: usize, c: usize| r * width + (c + bw - r);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| rhs[old]).collect();
        for i in 0..n {
            let first = i.saturating_sub(bw);
            let mut s = y[i];
            for j in first..i {
                s -= self.band[at(i, j)] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let last = (i + bw).min(n.saturating_sub(1));
            let mut s = y[i];
            for j in (i + 1)..=last {
                s -= self.band[at(i, j)] * y[j];
            }
            y[i] = s / self.band[at(i, i)];
        }
        (0..n).map(|old| y[self.inv[old]]).collect()
    }
}

fn bicgstab(m: &CsrMatrix, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = m.nrows;
    let diag: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    if let Some(i) = diag.iter().position(|d| *d == 0.0) {
        return Err(HjbError::MMatrix(format!("zero diagonal in row {i}")));
    }
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&diag).map(|(a, d)| a / d).collect() };
    let mv = |v: &[f64]| -> Vec<f64> {
        (0..n).map(|i| m.row(i).map(|(j, a)| a * v[j]).sum()).collect()
    };
    let dotp = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let target = tol * (1.0 + inf_norm(rhs));
    let mut x = precond(rhs);
    let ax = mv(&x);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for _ in 0..(20 * n + 100) {
        if inf_norm(&r) <= target {
            return Ok(x);
        }
        let rho_new = dotp(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let phat = precond(&p);
        v = mv(&phat);
        alpha = rho / dotp(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        let shat = precond(&s);
        let t = mv(&shat);
        let tt = dotp(&t, &t);
        omega = if tt > 0.0 { dotp(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        if omega == 0.0 {
            break;
        }
    }
    let residual = residual_norm(m, &x, rhs);
    if residual <= target {
        Ok(x)
    } else {
        Err(HjbError::LinearSolver {
            message: "BiCGSTAB did not converge".into(),
            residual,
        })
    }
}

/// Prepared solver for repeated solves with one matrix.
#[derive(Debug, Clone)]
pub enum Factorization {
    Direct(BandedLu),
    Iterative(CsrMatrix),
}

impl Factorization {
    pub fn new(m: &CsrMatrix) -> Result<Factorization> {
        match BandedLu::factor(m) {
            Ok(lu) => Ok(Factorization::Direct(lu)),
            Err(HjbError::LinearSolver { .. }) => Ok(Factorization::Iterative(m.clone())),
            Err(e) => Err(e),
        }
    }

    /// Solves `M x = rhs` with `|M x - rhs|_inf <= tol (1 + |rhs|_inf)`.
    pub fn solve(&self, m: &CsrMatrix, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
        if rhs.len() != m.nrows {
            return Err(HjbError::DimensionMismatch {
                expected: m.nrows,
                found: rhs.len(),
            });
        }
        let target = tol * (1.0 + inf_norm(rhs));
        match self {
            Factorization::Direct(lu) => {
                let mut x = lu.solve(rhs);
                let mut residual = residual_norm(m, &x, rhs);
                // one step of iterative refinement if rounding left us short
                if residual > target {
                    let r: Vec<f64> = m
                        .matvec(&x)?
                        .iter()
                        .zip(rhs)
                        .map(|(ax, b)| b - ax)
                        .collect();
                    let dx = lu.solve(&r);
                    x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
                    residual = residual_norm(m, &x, rhs);
                }
                if residual > target || !residual.is_finite() {
                    return Err(HjbError::LinearSolver {
                        message: "direct solve residual above tolerance".into(),
                        residual,
                    });
                }
                Ok(x)
            }
            Factorization::Iterative(a) => bicgstab(a, rhs, tol),
        }
    }
}

/// Solves `M x = rhs` for a diagonally dominant M-matrix (or SPD) `M`.
pub fn solve_mmatrix_system(m: &CsrMatrix, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    if m.nrows != m.ncols {
        return Err(HjbError::DimensionMismatch {
            expected: m.nrows,
            found: m.ncols,
        });
    }
    if m.nrows == 0 {
        return Ok(Vec::new());
    }
    Factorization::new(m)?.solve(m, rhs, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_like(n: usize, h: f64, dx: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 1.0 + 2.0 * h / (dx * dx)));
            if i > 0 {
                t.push((i, i - 1, -h / (dx * dx)));
            }
            if i + 1 < n {
                t.push((i, i + 1, -h / (dx * dx)));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let rhs = vec![1.0, -2.0, 3.5];
        let x = solve_mmatrix_system(&CsrMatrix::identity(3), &rhs, 1e-14).unwrap();
        assert_eq!(x, rhs);
    }

    #[test]
    fn tridiagonal_inverse_positive() {
        let m = laplacian_like(40, 0.1, 0.025);
        let x = solve_mmatrix_system(&m, &vec![1.0; 40], 1e-13).unwrap();
        assert!(x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 1, 1.0), (0, 1, 2.0), (1, 2, -1.0)]);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.matvec(&[1.0, 1.0, 1.0]).unwrap(), vec![3.0, -1.0]);
        assert!(matches!(m.matvec(&[1.0]), Err(HjbError::DimensionMismatch { .. })));
    }

    #[test]
    fn iterative_path_matches_direct() {
        let m = laplacian_like(60, 0.5, 0.1);
        let rhs: Vec<f64> = (0..60).map(|i| (i as f64).sin()).collect();
        let direct = solve_mmatrix_system(&m, &rhs, 1e-13).unwrap();
        let iterative = bicgstab(&m, &rhs, 1e-13).unwrap();
        for (a, b) in direct.iter().zip(&iterative) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]);
        assert!(matches!(solve_mmatrix_system(&m, &[1.0, 1.0], 1e-12), Err(HjbError::MMatrix(_))));
    }
}
