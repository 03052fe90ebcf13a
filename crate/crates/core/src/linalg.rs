//! Dense least-squares machinery for the regression models.
//!
//! The solver runs a Householder QR factorization, which is numerically
//! stable for the tall well-conditioned design matrices produced here. When
//! the triangular factor reveals rank deficiency the reduced system is
//! re-solved through a one-sided Jacobi SVD, yielding the minimum-norm
//! solution instead of failing.

use thiserror::Error;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix contains non-finite entries")]
    NonFiniteInput,
    #[error("need at least as many rows as columns: {rows} x {cols}")]
    TooFewRows { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Least-squares solution along with a rank-deficiency flag.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in &rows {
            assert_eq!(row.len(), n_cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: n_rows, cols: n_cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `self^T * v`.
    pub fn transpose_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let s = v[r];
            for (o, x) in out.iter_mut().zip(row) {
                *o += s * x;
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative tolerance used to declare a triangular diagonal negligible.
const RANK_TOL: f64 = 1e-10;

/// Solves `min ||X b - y||_2` via Householder QR. On rank deficiency the
/// minimum-norm solution is returned and flagged.
pub fn solve_least_squares(x: &Matrix, y: &[f64]) -> Result<LeastSquares, LinalgError> {
    let (m, n) = (x.rows(), x.cols());
    if m < n {
        return Err(LinalgError::TooFewRows { rows: m, cols: n });
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFiniteInput);
    }
    if y.len() != m {
        return Err(LinalgError::DimensionMismatch(format!(
            "y has {} entries for {} rows",
            y.len(),
            m
        )));
    }

    let mut a = x.clone();
    let mut qty = y.to_vec();

    // Householder reduction of A to upper-triangular form, applied to y too.
    for k in 0..n {
        let mut norm = 0.0;
        for i in k..m {
            let v = a.get(i, k);
            norm += v * v;
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue;
        }
        // v = x + sign(x0) * ||x|| * e1, normalized; the sign choice avoids
        // cancellation.
        let x0 = a.get(k, k);
        let sign = if x0 >= 0.0 { 1.0 } else { -1.0 };
        let mut v = Vec::with_capacity(m - k);
        v.push(x0 + sign * norm);
        for i in k + 1..m {
            v.push(a.get(i, k));
        }
        let vnorm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        for t in &mut v {
            *t /= vnorm;
        }

        for j in k..n {
            let mut proj = 0.0;
            for i in k..m {
                proj += v[i - k] * a.get(i, j);
            }
            for i in k..m {
                let updated = a.get(i, j) - 2.0 * v[i - k] * proj;
                a.set(i, j, updated);
            }
        }
        let mut proj = 0.0;
        for i in k..m {
            proj += v[i - k] * qty[i];
        }
        for i in k..m {
            qty[i] -= 2.0 * v[i - k] * proj;
        }
    }

    let max_diag = (0..n).map(|i| a.get(i, i).abs()).fold(0.0f64, f64::max);
    let tol = RANK_TOL * max_diag.max(1e-300);
    let rank = (0..n).filter(|&i| a.get(i, i).abs() > tol).count();

    if rank == n {
        // Back substitution on R b = Q^T y.
        let mut beta = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = qty[i];
            for j in i + 1..n {
                s -= a.get(i, j) * beta[j];
            }
            beta[i] = s / a.get(i, i);
        }
        return Ok(LeastSquares { coefficients: beta, rank, rank_deficient: false });
    }

    // Rank-deficient: minimum-norm solution of the reduced n x n system
    // R b = qty[..n] through an SVD pseudo-inverse. Q is orthogonal, so the
    // minimizer of the reduced problem minimizes the original one.
    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            r.set(i, j, a.get(i, j));
        }
    }
    let beta = svd_min_norm_solve(&r, &qty[..n]);
    Ok(LeastSquares { coefficients: beta, rank, rank_deficient: true })
}

/// Minimum-norm solution of a (possibly singular) square system in the
/// least-squares sense, via one-sided Jacobi SVD.
fn svd_min_norm_solve(a: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = a.cols();
    // Work on W = A, rotating columns until pairwise orthogonal; V collects
    // the rotations so that A = W_final V^T with W = U diag(sigma).
    let mut w = a.clone();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }

    let eps = f64::EPSILON;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..n {
                    let wp = w.get(i, p);
                    let wq = w.get(i, q);
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(1e-300));
                if gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let wp = w.get(i, p);
                    let wq = w.get(i, q);
                    w.set(i, p, c * wp - s * wq);
                    w.set(i, q, s * wp + c * wq);
                }
                for i in 0..n {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if off < 1e-14 {
            break;
        }
    }

    let mut sigma = vec![0.0; n];
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            let t = w.get(i, j);
            s += t * t;
        }
        sigma[j] = s.sqrt();
    }
    let sigma_max = sigma.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = sigma_max * (n as f64) * eps * 10.0;

    // x = V diag(1/sigma) U^T b where U columns are w_j / sigma_j.
    let mut x = vec![0.0; n];
    for j in 0..n {
        if sigma[j] <= cutoff {
            continue;
        }
        let mut utb = 0.0;
        for i in 0..n {
            utb += w.get(i, j) / sigma[j] * b[i];
        }
        let scale = utb / sigma[j];
        for i in 0..n {
            x[i] += v.get(i, j) * scale;
        }
    }
    x
}
