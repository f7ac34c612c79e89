//! Row-compressed sparse matrices and the linear solvers used by every time
//! step.
//!
//! The default solver is a banded LU factorization without pivoting, which is
//! exact and deterministic for the diagonally dominant Z-matrices produced by
//! the low-order operators. When a factorization cannot be formed, or fails
//! its residual check, solves fall back to restarted GMRES with a Jacobi
//! preconditioner.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    /// Builds an `n × n` operator from `(row, col, value)` triplets; duplicate
    /// positions are summed.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        if let Some(&(i, j, _)) = entries.iter().find(|&&(i, j, _)| i >= n || j >= n) {
            return Err(Error::invalid(format!("entry ({i}, {j}) outside a {n}x{n} operator")));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    /// True if `(i, j)` is a stored position (its value may be zero).
    pub fn has_entry(&self, i: usize, j: usize) -> bool {
        self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]].binary_search(&j).is_ok()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    /// Applies `f` to every stored value, keeping the pattern.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.values[p] = f(i, self.col_idx[p], self.values[p]);
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::invalid(format!(
                "matvec: vector of length {} for a {}x{} operator",
                x.len(),
                self.n,
                self.n
            )));
        }
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    /// `y = A x` without dimension checks.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[p] * x[self.col_idx[p]];
            }
            *yi = s;
        }
    }

    /// Entrywise linear combination `Σ c_k A_k` over the union of patterns.
    pub fn combine(parts: &[(f64, &SparseOperator)]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::invalid("combine needs at least one operator"));
        };
        let n = first.1.n;
        if let Some((_, bad)) = parts.iter().find(|(_, a)| a.n != n) {
            return Err(Error::invalid(format!(
                "combine: dimension mismatch ({} vs {})",
                bad.n, n
            )));
        }
        Self::from_triplets(
            n,
            parts
                .iter()
                .flat_map(|&(c, a)| a.iter().map(move |(i, j, v)| (i, j, c * v))),
        )
    }

    /// Principal submatrix on the rows and columns with `Some` index in `map`.
    pub fn restrict(&self, map: &[Option<usize>]) -> Result<Self> {
        if map.len() != self.n {
            return Err(Error::invalid("restriction map length does not match operator"));
        }
        let m = map.iter().filter(|x| x.is_some()).count();
        Self::from_triplets(
            m,
            self.iter()
                .filter_map(|(i, j, v)| Some((map[i]?, map[j]?, v))),
        )
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.n, self.iter().map(|(i, j, v)| (j, i, v))).expect("transpose stays in bounds")
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, j, v) in self.iter() {
            d[i][j] = v;
        }
        d
    }

    /// Lower and upper bandwidth of the stored pattern.
    pub fn bandwidth(&self) -> (usize, usize) {
        let mut lo = 0;
        let mut hi = 0;
        for (i, j, _) in self.iter() {
            if j < i {
                lo = lo.max(i - j);
            } else {
                hi = hi.max(j - i);
            }
        }
        (lo, hi)
    }

    /// MatrixMarket coordinate dump (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        for (i, j, v) in self.iter() {
            writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// Solver settings shared by direct and iterative paths.
#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Required relative residual `‖Ax − b‖₂ / ‖b‖₂`.
    pub tol: f64,
    pub gmres_restart: usize,
    /// Iteration cap as a multiple of the dimension.
    pub max_iter_factor: usize,
    /// Band storage limit (number of f64 entries) above which the direct
    /// path is skipped.
    pub max_band_entries: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            gmres_restart: 30,
            max_iter_factor: 10,
            max_band_entries: 50_000_000,
        }
    }
}

/// Banded LU factors without pivoting, stored row-wise.
#[derive(Clone, Debug)]
struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    band: Vec<f64>,
}

impl BandedLu {
    fn width(&self) -> usize {
        self.lower + self.upper + 1
    }

    fn factor(a: &SparseOperator, max_entries: usize) -> Option<Self> {
        let n = a.dim();
        let (lower, upper) = a.bandwidth();
        let width = lower + upper + 1;
        if n.checked_mul(width)? > max_entries {
            return None;
        }
        let mut lu = Self {
            n,
            lower,
            upper,
            band: vec![0.0; n * width],
        };
        for (i, j, v) in a.iter() {
            lu.band[i * width + (j + lower - i)] = v;
        }
        let scale = a.iter().map(|(_, _, v)| v.abs()).fold(0.0, f64::max);
        for k in 0..n {
            let pivot = lu.band[k * width + lower];
            if !(pivot.abs() > 1e-14 * scale) {
                return None;
            }
            let jmax = (k + upper).min(n - 1);
            for i in (k + 1)..=(k + lower).min(n - 1) {
                let ik = i * width + (k + lower - i);
                let l = lu.band[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                lu.band[ik] = l;
                for j in (k + 1)..=jmax {
                    let kj = lu.band[k * width + (j + lower - k)];
                    lu.band[i * width + (j + lower - i)] -= l * kj;
                }
            }
        }
        Some(lu)
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, w, lo) = (self.n, self.width(), self.lower);
        let mut x = rhs.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for j in i.saturating_sub(lo)..i {
                s -= self.band[i * w + (j + lo - i)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..=(i + self.upper).min(n - 1) {
                s -= self.band[i * w + (j + lo - i)] * x[j];
            }
            x[i] = s / self.band[i * w + lo];
        }
        x
    }
}

/// A square system prepared for repeated solves with different right-hand
/// sides.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    matrix: SparseOperator,
    lu: Option<BandedLu>,
    options: SolverOptions,
}

impl LinearSystem {
    pub fn new(matrix: SparseOperator, options: SolverOptions) -> Self {
        let lu = BandedLu::factor(&matrix, options.max_band_entries);
        if lu.is_none() {
            log::debug!("direct factorization unavailable for n = {}, using GMRES", matrix.dim());
        }
        Self { matrix, lu, options }
    }

    pub fn matrix(&self) -> &SparseOperator {
        &self.matrix
    }

    pub fn is_factorized(&self) -> bool {
        self.lu.is_some()
    }

    /// Solves `A x = rhs` to the configured relative residual.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.matrix.dim();
        if rhs.len() != n {
            return Err(Error::invalid(format!("rhs of length {} for a system of size {n}", rhs.len())));
        }
        let bnorm = norm2(rhs);
        if bnorm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let tol = self.options.tol;
        let mut guess = None;
        if let Some(lu) = &self.lu {
            let mut x = lu.solve(rhs);
            for _ in 0..3 {
                let r = residual(&self.matrix, &x, rhs);
                if norm2(&r) <= tol * bnorm {
                    return Ok(x);
                }
                let dx = lu.solve(&r);
                x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
            }
            if relative_residual(&self.matrix, &x, rhs) <= tol {
                return Ok(x);
            }
            guess = Some(x);
        }
        gmres(&self.matrix, rhs, guess, &self.options)
    }
}

/// One-shot solve of `A x = rhs` with relative residual `tol`.
pub fn solve(a: &SparseOperator, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    LinearSystem::new(
        a.clone(),
        SolverOptions {
            tol,
            ..SolverOptions::default()
        },
    )
    .solve(rhs)
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm_max(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn residual(a: &SparseOperator, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; b.len()];
    a.matvec_into(x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    r
}

pub fn relative_residual(a: &SparseOperator, x: &[f64], b: &[f64]) -> f64 {
    let bn = norm2(b);
    let rn = norm2(&residual(a, x, b));
    if bn == 0.0 {
        rn
    } else {
        rn / bn
    }
}

/// Right-preconditioned restarted GMRES with Jacobi scaling.
fn gmres(a: &SparseOperator, b: &[f64], x0: Option<Vec<f64>>, opts: &SolverOptions) -> Result<Vec<f64>> {
    let n = a.dim();
    let inv_diag: Vec<f64> = a
        .diag()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let m = opts.gmres_restart.max(1).min(n.max(1));
    let max_iter = opts.max_iter_factor * n.max(1);
    let bnorm = norm2(b);
    let mut x = x0.unwrap_or_else(|| vec![0.0; n]);
    let mut iterations = 0;
    let mut tmp = vec![0.0; n];

    loop {
        let r = residual(a, &x, b);
        let beta = norm2(&r);
        if beta <= opts.tol * bnorm {
            return Ok(x);
        }
        if iterations >= max_iter {
            return Err(Error::SolverFailure {
                method: "gmres",
                residual: beta / bnorm,
                iterations,
            });
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut used = 0;
        for j in 0..m {
            let z: Vec<f64> = basis[j].iter().zip(&inv_diag).map(|(v, d)| v * d).collect();
            a.matvec_into(&z, &mut tmp);
            let mut w = tmp.clone();
            for (i, vi) in basis.iter().enumerate() {
                let hij: f64 = w.iter().zip(vi).map(|(a, b)| a * b).sum();
                h[i][j] = hij;
                w.iter_mut().zip(vi).for_each(|(wk, vk)| *wk -= hij * vk);
            }
            let wn = norm2(&w);
            h[j + 1][j] = wn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if denom == 0.0 {
                break;
            }
            cs[j] = h[j][j] / denom;
            sn[j] = h[j + 1][j] / denom;
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            iterations += 1;
            if g[j + 1].abs() <= opts.tol * bnorm * 0.5 || wn == 0.0 || iterations >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        if used == 0 {
            return Err(Error::SolverFailure {
                method: "gmres",
                residual: beta / bnorm,
                iterations,
            });
        }
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for k in (i + 1)..used {
                s -= h[i][k] * y[k];
            }
            y[i] = s / h[i][i];
        }
        for (k, yk) in y.iter().enumerate() {
            for ((xi, vi), d) in x.iter_mut().zip(&basis[k]).zip(&inv_diag) {
                *xi += yk * vi * d;
            }
        }
    }
}
