//! Dense real linear algebra for small symmetric problems.
//!
//! Everything here is 64-bit, row-major and allocation-light. The eigensolver
//! is cyclic Jacobi, which is unconditionally convergent for symmetric input
//! and accurate to a few ulps on the matrix sizes this crate deals with
//! (at most a few hundred rows). Generalized problems `L u = λ D u` are
//! reduced to the standard form through the Cholesky factor of `D`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use thiserror::Error;

/// Relative tolerance used to decide whether an input is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Ridge added to the normal equations in [`least_squares`].
pub const LSTSQ_RIDGE: f64 = 1e-10;

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("matrix must be non-empty")]
    Empty,
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is singular (eigenvalue {value:e} at index {index})")]
    Singular { index: usize, value: f64 },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("least squares needs at least {needed} rows, got {rows}")]
    Underdetermined { rows: usize, needed: usize },
    #[error("jacobi sweeps did not converge (off-diagonal norm {off:e})")]
    NoConvergence { off: f64 },
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Validated constructor: dimensions must be positive, the buffer must
    /// hold exactly `rows * cols` finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Empty);
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    ///
    /// # Panics
    /// If the rows are ragged.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let rows = columns.first().map_or(0, |c| c.len());
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), rows, "ragged columns");
            for (i, &v) in c.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// Keeps the listed columns, in order.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(self.rows, idx.len());
        for r in 0..self.rows {
            for (k, &c) in idx.iter().enumerate() {
                m[(r, k)] = self[(r, c)];
            }
        }
        m
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    /// Matrix product.
    ///
    /// # Panics
    /// If inner dimensions disagree.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * x`.
    ///
    /// # Panics
    /// If `x.len() != cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ * x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "tr_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * xr;
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "elementwise shape mismatch"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Adds `s` to every diagonal entry.
    pub fn add_diagonal(&self, s: f64) -> Matrix {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] += s;
        }
        m
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        let mut m = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Eigenvalues in ascending order; column `k` of `vectors` pairs with `values[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigResult {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl EigResult {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k)
    }
}

fn check_square(s: &Matrix) -> Result<(), LinalgError> {
    if s.rows == 0 {
        return Err(LinalgError::Empty);
    }
    if !s.is_square() {
        return Err(LinalgError::NotSquare {
            rows: s.rows,
            cols: s.cols,
        });
    }
    Ok(())
}

fn check_symmetric(s: &Matrix) -> Result<(), LinalgError> {
    check_square(s)?;
    let asymmetry = s.max_asymmetry();
    if asymmetry > SYMMETRY_TOL * s.frobenius_norm().max(f64::MIN_POSITIVE) {
        return Err(LinalgError::NotSymmetric { asymmetry });
    }
    Ok(())
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Values come back ascending; ties keep their diagonal order.
pub fn eig_sym(s: &Matrix) -> Result<EigResult, LinalgError> {
    check_symmetric(s)?;
    if !s.is_finite() {
        let index = s.data.iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(LinalgError::NonFinite { index });
    }
    let n = s.rows;
    let mut a = s.symmetrized();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok(EigResult {
            values: vec![0.0; n],
            vectors: v,
        });
    }
    // Stop once the off-diagonal mass is at the rounding floor of the input.
    let target = f64::EPSILON * scale * 1e-2;
    let negligible = f64::EPSILON * 1e-3 * scale / n as f64;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // Entry already negligible next to both diagonal terms.
                if apq.abs() <= negligible || apq.abs() < f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn, t, apq);
            }
        }
    }
    if !converged {
        let off = off_diagonal_norm(&a);
        if off > target * 1e4 {
            return Err(LinalgError::NoConvergence { off });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps index order on ties.
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap_or(core::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = v.select_columns(&order);
    Ok(EigResult { values, vectors })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let mut s = 0.0;
    for i in 0..a.rows {
        for j in (i + 1)..a.cols {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    libm::sqrt(2.0 * s)
}

#[allow(clippy::too_many_arguments)]
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64, t: f64, apq: f64) {
    let n = a.rows;
    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Lower-triangular `G` with `G Gᵀ = S` and a positive diagonal.
pub fn cholesky(s: &Matrix) -> Result<Matrix, LinalgError> {
    check_symmetric(s)?;
    let n = s.rows;
    let mut g = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= g[(j, k)] * g[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { pivot: j, value: d });
        }
        let gjj = libm::sqrt(d);
        g[(j, j)] = gjj;
        for i in (j + 1)..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= g[(i, k)] * g[(j, k)];
            }
            g[(i, j)] = v / gjj;
        }
    }
    Ok(g)
}

/// Solves `G x = b` for lower-triangular `G`.
pub fn forward_substitute(g: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = g.rows;
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= g[(i, k)] * x[k];
        }
        x[i] = v / g[(i, i)];
    }
    x
}

/// Solves `Gᵀ x = b` for lower-triangular `G`.
pub fn back_substitute_transposed(g: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = g.rows;
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= g[(k, i)] * x[k];
        }
        x[i] = v / g[(i, i)];
    }
    x
}

/// Solves `S x = b` given the Cholesky factor of `S`.
pub fn cholesky_solve(g: &Matrix, b: &[f64]) -> Vec<f64> {
    back_substitute_transposed(g, &forward_substitute(g, b))
}

/// Solves `S x = b` for symmetric positive-definite `S`.
pub fn solve(s: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    check_square(s)?;
    if b.len() != s.rows {
        return Err(LinalgError::DimensionMismatch {
            expected: s.rows,
            actual: b.len(),
        });
    }
    let g = cholesky(s)?;
    Ok(cholesky_solve(&g, b))
}

/// Inverse of a symmetric positive-definite matrix, column by column.
pub fn inverse_pd(s: &Matrix) -> Result<Matrix, LinalgError> {
    let g = cholesky(s)?;
    let n = s.rows;
    let mut cols = Vec::with_capacity(n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        cols.push(cholesky_solve(&g, &e));
    }
    Ok(Matrix::from_columns(&cols).symmetrized())
}

/// `log det S` for symmetric positive-definite `S`.
pub fn log_det_pd(s: &Matrix) -> Result<f64, LinalgError> {
    let g = cholesky(s)?;
    Ok(2.0 * g.diagonal().iter().map(|&d| libm::log(d)).sum::<f64>())
}

/// `S^{-1/2}` through the eigendecomposition of `S`.
pub fn inv_sqrt_sym(s: &Matrix) -> Result<Matrix, LinalgError> {
    let eig = eig_sym(s)?;
    let max = eig.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = 1e-12 * max;
    if let Some((index, &value)) = eig
        .values
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > floor) || !(v > 0.0))
    {
        return Err(LinalgError::Singular { index, value });
    }
    let n = s.rows;
    let mut scaled = eig.vectors.clone();
    for c in 0..n {
        let f = 1.0 / libm::sqrt(eig.values[c]);
        for r in 0..n {
            scaled[(r, c)] *= f;
        }
    }
    Ok(scaled.matmul(&eig.vectors.transpose()).symmetrized())
}

/// Generalized symmetric-definite eigenproblem `L u = λ D u`.
///
/// With `D = G Gᵀ` the problem becomes `G⁻¹ L G⁻ᵀ z = λ z`, `u = G⁻ᵀ z`.
/// Returned vectors satisfy `Uᵀ D U = I`.
pub fn eig_gen_sym(l: &Matrix, d: &Matrix) -> Result<EigResult, LinalgError> {
    check_symmetric(l)?;
    check_symmetric(d)?;
    if l.rows != d.rows {
        return Err(LinalgError::DimensionMismatch {
            expected: l.rows,
            actual: d.rows,
        });
    }
    let n = l.rows;
    let g = cholesky(d)?;
    // X = G⁻¹ L, column by column.
    let x_cols: Vec<Vec<f64>> = (0..n)
        .map(|j| forward_substitute(&g, &l.column(j)))
        .collect();
    let x = Matrix::from_columns(&x_cols);
    // C = G⁻¹ Xᵀ = G⁻¹ L G⁻ᵀ since L is symmetric.
    let xt = x.transpose();
    let c_cols: Vec<Vec<f64>> = (0..n)
        .map(|j| forward_substitute(&g, &xt.column(j)))
        .collect();
    let c = Matrix::from_columns(&c_cols).symmetrized();
    let eig = eig_sym(&c)?;
    let u_cols: Vec<Vec<f64>> = (0..n)
        .map(|k| back_substitute_transposed(&g, &eig.vectors.column(k)))
        .collect();
    Ok(EigResult {
        values: eig.values,
        vectors: Matrix::from_columns(&u_cols),
    })
}

/// Ordinary least squares with an intercept.
///
/// Returns `cols(x) + 1` coefficients, the intercept last. Solved through the
/// normal equations with a [`LSTSQ_RIDGE`] ridge.
pub fn least_squares(x: &Matrix, y: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = x.rows;
    let p = x.cols + 1;
    if n < p {
        return Err(LinalgError::Underdetermined { rows: n, needed: p });
    }
    if y.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    let mut gram = Matrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    let mut row = vec![1.0; p];
    for (r, &yr) in y.iter().enumerate() {
        row[..p - 1].copy_from_slice(x.row(r));
        for i in 0..p {
            rhs[i] += row[i] * yr;
            for j in i..p {
                gram[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    solve(&gram.add_diagonal(LSTSQ_RIDGE), &rhs)
}

/// Evaluates a [`least_squares`] fit on the rows of `x`.
pub fn predict_linear(x: &Matrix, beta: &[f64]) -> Vec<f64> {
    let p = x.cols;
    (0..x.rows)
        .map(|r| dot(x.row(r), &beta[..p]) + beta[p])
        .collect()
}
