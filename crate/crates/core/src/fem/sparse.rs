//! Compressed sparse row storage and a Jacobi-preconditioned conjugate
//! gradient solver.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n × n` matrix from `(row, col, value)` triplets, summing
    /// duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(triplets.len() / 3);
        let mut values = Vec::with_capacity(triplets.len() / 3);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            scratch.clear();
            scratch.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_unstable_by_key(|&(c, _)| c);
            for &(c, v) in &scratch {
                if col_idx.len() > row_ptr[i] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &t)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match cols.binary_search(&j) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    /// `max |a_ij - a_ji|` over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Symmetric preconditioner `M ≈ A` applied as `z = M⁻¹ r`.
#[derive(Clone, Debug)]
pub enum Preconditioner {
    Jacobi(Vec<f64>),
    /// Zero fill-in incomplete Cholesky factor, lower rows with the
    /// diagonal stored last.
    IncompleteCholesky(CsrMatrix),
}

impl Preconditioner {
    pub fn jacobi(a: &CsrMatrix) -> Result<Self> {
        let diag = a.diagonal();
        if diag.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Solver {
                message: "matrix has a non-positive diagonal entry; not SPD".into(),
                residual: 1.0,
                iterations: 0,
            });
        }
        Ok(Preconditioner::Jacobi(diag.iter().map(|d| 1.0 / d).collect()))
    }

    /// IC(0) of `A`; on pivot breakdown the diagonal is shifted, and if that
    /// keeps failing Jacobi is used instead.
    pub fn incomplete_cholesky(a: &CsrMatrix) -> Result<Self> {
        let jacobi = Self::jacobi(a)?;
        for shift in [0.0, 1e-3, 1e-2, 1e-1] {
            if let Some(l) = ic0(a, shift) {
                return Ok(Preconditioner::IncompleteCholesky(l));
            }
        }
        log::debug!("incomplete Cholesky broke down; falling back to Jacobi");
        Ok(jacobi)
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioner::Jacobi(inv) => {
                for i in 0..r.len() {
                    z[i] = r[i] * inv[i];
                }
            }
            Preconditioner::IncompleteCholesky(l) => {
                let n = r.len();
                for i in 0..n {
                    let (mut acc, mut diag) = (r[i], 1.0);
                    for (j, v) in l.row(i) {
                        if j == i {
                            diag = v;
                        } else {
                            acc -= v * z[j];
                        }
                    }
                    z[i] = acc / diag;
                }
                for i in (0..n).rev() {
                    let diag = l.values[l.row_ptr[i + 1] - 1];
                    z[i] /= diag;
                    let zi = z[i];
                    for k in l.row_ptr[i]..l.row_ptr[i + 1] - 1 {
                        z[l.col_idx[k]] -= l.values[k] * zi;
                    }
                }
            }
        }
    }
}

fn ic0(a: &CsrMatrix, shift: f64) -> Option<CsrMatrix> {
    let n = a.n;
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        let start = col_idx.len();
        let mut diag = 0.0;
        for (k, v) in a.row(i) {
            if k < i {
                col_idx.push(k);
                values.push(v);
            } else if k == i {
                diag = v * (1.0 + shift);
            }
        }
        for p in start..col_idx.len() {
            let k = col_idx[p];
            // sparse dot of the already computed parts of rows i and k
            let (mut q, kend) = (row_ptr[k], row_ptr[k + 1] - 1);
            let mut s = values[p];
            for r in start..p {
                let j = col_idx[r];
                while q < kend && col_idx[q] < j {
                    q += 1;
                }
                if q < kend && col_idx[q] == j {
                    s -= values[r] * values[q];
                }
            }
            values[p] = s / values[kend];
        }
        let d = diag - values[start..].iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        col_idx.push(i);
        values.push(d.sqrt());
        row_ptr.push(col_idx.len());
    }
    Some(CsrMatrix {
        n,
        row_ptr,
        col_idx,
        values,
    })
}

/// Solves `A x = b` for symmetric positive definite `A` by Jacobi-PCG.
pub fn pcg_jacobi(a: &CsrMatrix, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)> {
    if norm(b) == 0.0 {
        return pcg(a, b, rel_tol, max_iter, &Preconditioner::Jacobi(vec![1.0; b.len()]));
    }
    pcg(a, b, rel_tol, max_iter, &Preconditioner::jacobi(a)?)
}

/// Preconditioned conjugate gradients for symmetric positive definite `A`.
///
/// Stops when `‖b - A x‖ ≤ rel_tol ‖b‖` for the true residual. A
/// non-positive curvature `pᵀ A p` is reported as a solver error, as is
/// hitting `max_iter`.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
    m: &Preconditioner,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.dim();
    assert_eq!(b.len(), n, "rhs length must match matrix dimension");
    let mut x = vec![0.0; n];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }

    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::Solver {
                message: format!("non-positive curvature {curvature:e}; matrix is not SPD"),
                residual: rel,
                iterations: it,
            });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = norm(&r) / b_norm;
        if rel <= rel_tol {
            // the recursive residual drifts from b - Ax in floating point;
            // accept only on the true residual, otherwise restart from it
            a.mul_vec_into(&x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            rel = norm(&r) / b_norm;
            if rel <= rel_tol {
                return Ok((
                    x,
                    SolveStats {
                        iterations: it,
                        relative_residual: rel,
                    },
                ));
            }
            m.apply(&r, &mut z);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver {
        message: format!("no convergence within {max_iter} iterations"),
        residual: rel,
        iterations: max_iter,
    })
}
