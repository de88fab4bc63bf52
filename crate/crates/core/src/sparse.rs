//! Compressed sparse row matrices with the solvers the transport and wind
//! models need: ILU(0)-preconditioned BiCGStab for the time steps and a banded
//! LU factorization used both for pressure projections and as the direct
//! fallback when the Krylov iteration breaks down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates `(row, col, value)` entries; duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::with_capacity(5 * n),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, value));
    }

    /// Builds the matrix. Every diagonal entry is materialized (possibly as
    /// an explicit zero) so ILU(0) can address it.
    pub fn build(self) -> CsrMatrix {
        let n = self.n;
        let mut row_ptr = vec![0usize; n + 1];
        for &(r, _, _) in &self.entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i] + 1;
        }
        // bucket by row, diagonal placeholder first
        let mut slots: Vec<(usize, f64)> = vec![(0, 0.0); row_ptr[n]];
        let mut next: Vec<usize> = row_ptr[..n].to_vec();
        for (i, nx) in next.iter_mut().enumerate() {
            slots[*nx] = (i, 0.0);
            *nx += 1;
        }
        for (r, c, v) in self.entries {
            slots[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut out_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(slots.len());
        let mut values: Vec<f64> = Vec::with_capacity(slots.len());
        for r in 0..n {
            let row = &mut slots[row_ptr[r]..row_ptr[r + 1]];
            row.sort_unstable_by_key(|e| e.0);
            let start = col_idx.len();
            for &(c, v) in row.iter() {
                if col_idx.len() > start && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            out_ptr[r + 1] = col_idx.len();
        }
        CsrMatrix {
            n,
            row_ptr: out_ptr,
            col_idx,
            values,
        }
    }
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `i`, sorted by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for (c, v) in self.col_idx.iter().zip(&self.values) {
            s[*c] += v;
        }
        s
    }

    /// Half-bandwidths `(lower, upper)`.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    /// Bitwise equality of structure and values.
    pub fn bit_identical(&self, other: &CsrMatrix) -> bool {
        self.n == other.n
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Incomplete LU factorization with the sparsity pattern of the input.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let mut lu = a.clone();
        let mut diag = vec![usize::MAX; n];
        for (i, d) in diag.iter_mut().enumerate() {
            for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.col_idx[k] == i {
                    *d = k;
                }
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let row = lu.row_ptr[i]..lu.row_ptr[i + 1];
            for k in row.clone() {
                pos[lu.col_idx[k]] = k;
            }
            for k in row.clone() {
                let c = lu.col_idx[k];
                if c >= i {
                    break;
                }
                let pivot = lu.values[diag[c]];
                if pivot == 0.0 {
                    return Err(Error::LinearSolver(format!("zero pivot in ILU(0) at row {c}")));
                }
                let l = lu.values[k] / pivot;
                lu.values[k] = l;
                for kk in (diag[c] + 1)..lu.row_ptr[c + 1] {
                    let p = pos[lu.col_idx[kk]];
                    if p != usize::MAX {
                        lu.values[p] -= l * lu.values[kk];
                    }
                }
            }
            for k in row {
                pos[lu.col_idx[k]] = usize::MAX;
            }
            if lu.values[diag[i]] == 0.0 {
                return Err(Error::LinearSolver(format!("zero pivot in ILU(0) at row {i}")));
            }
        }
        Ok(Self { lu, diag })
    }

    /// Solves `L U z = r` in place.
    pub fn apply(&self, z: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = z[i];
            for k in lu.row_ptr[i]..self.diag[i] {
                s -= lu.values[k] * z[lu.col_idx[k]];
            }
            z[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = z[i];
            for k in (self.diag[i] + 1)..lu.row_ptr[i + 1] {
                s -= lu.values[k] * z[lu.col_idx[k]];
            }
            z[i] = s / lu.values[self.diag[i]];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KrylovConfig {
    pub rtol: f64,
    pub max_iterations: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    /// `||b - A x|| / ||b||` at exit.
    pub relative_residual: f64,
    /// True when the Krylov solve failed and the banded LU was used.
    pub direct_fallback: bool,
}

/// Right-preconditioned BiCGStab starting from `x`.
pub fn bicgstab(
    a: &CsrMatrix,
    precond: &Ilu0,
    b: &[f64],
    x: &mut [f64],
    cfg: KrylovConfig,
) -> Result<SolveStats> {
    let n = a.n;
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats::default());
    }
    let tol = cfg.rtol * b_norm;
    let mut r = a.mul_vec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut r_norm = norm2(&r);
    if r_norm <= tol {
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: r_norm / b_norm,
            direct_fallback: false,
        });
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];

    for it in 1..=cfg.max_iterations {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(Error::LinearSolver(format!("BiCGStab breakdown (rho) at iteration {it}")));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        p_hat.copy_from_slice(&p);
        precond.apply(&mut p_hat);
        a.mul_vec_into(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            return Err(Error::LinearSolver(format!("BiCGStab breakdown (alpha) at iteration {it}")));
        }
        alpha = rho / denom;
        // r becomes s
        for k in 0..n {
            r[k] -= alpha * v[k];
        }
        let s_norm = norm2(&r);
        if s_norm <= tol {
            for k in 0..n {
                x[k] += alpha * p_hat[k];
            }
            return Ok(SolveStats {
                iterations: it,
                relative_residual: s_norm / b_norm,
                direct_fallback: false,
            });
        }
        s_hat.copy_from_slice(&r);
        precond.apply(&mut s_hat);
        a.mul_vec_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(Error::LinearSolver(format!("BiCGStab breakdown (omega) at iteration {it}")));
        }
        omega = dot(&t, &r) / tt;
        for k in 0..n {
            x[k] += alpha * p_hat[k] + omega * s_hat[k];
            r[k] -= omega * t[k];
        }
        r_norm = norm2(&r);
        if !r_norm.is_finite() {
            return Err(Error::LinearSolver("BiCGStab diverged".into()));
        }
        if r_norm <= tol {
            return Ok(SolveStats {
                iterations: it,
                relative_residual: r_norm / b_norm,
                direct_fallback: false,
            });
        }
        if omega == 0.0 {
            return Err(Error::LinearSolver(format!("BiCGStab stagnated at iteration {it}")));
        }
    }
    Err(Error::LinearSolver(format!(
        "BiCGStab reached {} iterations (relative residual {:.3e})",
        cfg.max_iterations,
        r_norm / b_norm
    )))
}

/// LU factorization without pivoting in band storage. Suitable for the
/// diagonally dominant and symmetric positive definite systems assembled here.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    band: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let (kl, ku) = a.bandwidths();
        let w = kl + ku + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                band[i * w + (j + kl - i)] = v;
            }
        }
        for k in 0..n {
            let pivot = band[k * w + kl];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::LinearSolver(format!("singular banded pivot at row {k}")));
            }
            let i_end = (k + kl).min(n - 1);
            let j_end = (k + ku).min(n - 1);
            for i in (k + 1)..=i_end {
                let ik = i * w + (k + kl - i);
                let l = band[ik] / pivot;
                band[ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in (k + 1)..=j_end {
                    band[i * w + (j + kl - i)] -= l * band[k * w + (j + kl - k)];
                }
            }
        }
        Ok(Self { n, kl, ku, band })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let w = kl + ku + 1;
        for i in 0..n {
            let mut s = x[i];
            for j in i.saturating_sub(kl)..i {
                s -= self.band[i * w + (j + kl - i)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..=(i + ku).min(n - 1) {
                s -= self.band[i * w + (j + kl - i)] * x[j];
            }
            x[i] = s / self.band[i * w + kl];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// BiCGStab with ILU(0), falling back to a banded direct solve if the
/// preconditioner or the iteration fails.
pub fn solve_with_fallback(
    a: &CsrMatrix,
    precond: Option<&Ilu0>,
    b: &[f64],
    x: &mut [f64],
    cfg: KrylovConfig,
) -> Result<SolveStats> {
    let krylov = match precond {
        Some(p) => bicgstab(a, p, b, x, cfg),
        None => Err(Error::LinearSolver("no preconditioner".into())),
    };
    match krylov {
        Ok(stats) => Ok(stats),
        Err(e) => {
            log::warn!("{e}; falling back to banded LU");
            let lu = BandedLu::factor(a)?;
            x.copy_from_slice(b);
            lu.solve_in_place(x);
            let mut r = a.mul_vec(x);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri -= bi;
            }
            let b_norm = norm2(b);
            Ok(SolveStats {
                iterations: 0,
                relative_residual: if b_norm > 0.0 { norm2(&r) / b_norm } else { 0.0 },
                direct_fallback: true,
            })
        }
    }
}
