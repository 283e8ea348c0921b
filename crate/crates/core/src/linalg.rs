//! Small dense linear algebra for state dimensions up to a few dozen.
//!
//! Everything here is row-major and allocation-light. The symmetric
//! eigensolver is a cyclic Jacobi iteration with a fixed sweep order, so the
//! same input always produces bit-identical output.

use std::ops::{Index, IndexMut};

use serde::Serialize;
use thiserror::Error;

/// Largest dimension accepted by the spectral routines.
pub const MAX_SPECTRAL_DIM: usize = 16;

const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max |a_ij - a_ji| = {residual:e})")]
    NotSymmetric { residual: f64 },
    #[error("matrix is not positive definite: eigenvalue {eigenvalue:e}")]
    NotPositiveDefinite { eigenvalue: f64 },
    #[error("matrix is singular within tolerance: eigenvalue {eigenvalue:e}")]
    Singular { eigenvalue: f64 },
    #[error("dimension {0} exceeds the supported maximum of {MAX_SPECTRAL_DIM}")]
    TooLarge(usize),
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Resizes in place and zeroes every entry.
    pub fn reset(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.clear();
        self.data.resize(rows * cols, 0.0);
    }

    pub fn copy_from(&mut self, other: &Matrix) {
        self.rows = other.rows;
        self.cols = other.cols;
        self.data.clear();
        self.data.extend_from_slice(&other.data);
    }

    pub fn set_identity(&mut self, n: usize) {
        self.reset(n, n);
        for i in 0..n {
            self.data[i * n + i] = 1.0;
        }
    }

    /// `out = self * v`.
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(v, &mut out);
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * c).collect() }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    /// Frobenius norm, `sqrt(tr(M M^T))`.
    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    /// `max |a_ij - a_ji|`; infinite for non-square input.
    pub fn symmetry_residual(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut r: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                r = r.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        r
    }

    pub fn symmetrized(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    /// `<M u, u>`.
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rows {
            let row = self.row(i);
            acc += u[i] * row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.rows).all(|i| (0..self.cols).all(|j| i == j || self[(i, j)] == 0.0))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending, eigenvectors in
/// the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymmetricEigen {
    /// Rebuilds `Q diag(map(lambda)) Q^T`.
    pub fn reconstruct(&self, map: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mapped: Vec<f64> = self.values.iter().map(|&l| map(l)).collect();
        let q = &self.vectors;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for (k, lk) in mapped.iter().enumerate() {
                    acc += q[(i, k)] * lk * q[(j, k)];
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

fn check_square_finite(a: &Matrix) -> Result<usize, SpectralError> {
    if !a.is_square() {
        return Err(SpectralError::NotSquare { rows: a.rows, cols: a.cols });
    }
    if a.rows > MAX_SPECTRAL_DIM {
        return Err(SpectralError::TooLarge(a.rows));
    }
    if !a.is_finite() {
        return Err(SpectralError::NonFinite);
    }
    Ok(a.rows)
}

fn check_symmetric(a: &Matrix) -> Result<(), SpectralError> {
    let residual = a.symmetry_residual();
    if residual > 1e-10 * a.max_abs().max(1.0) {
        return Err(SpectralError::NotSymmetric { residual });
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Only the symmetric part of `a` is used; callers that care about asymmetry
/// check it themselves.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen, SpectralError> {
    let n = check_square_finite(a)?;
    let mut m = a.symmetrized();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius();
    if scale == 0.0 {
        return Ok(SymmetricEigen { values: vec![0.0; n], vectors: v });
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors })
}

/// Eigendecomposition that additionally requires symmetry and strictly
/// positive eigenvalues.
pub fn spd_eigen(a: &Matrix) -> Result<SymmetricEigen, SpectralError> {
    check_square_finite(a)?;
    check_symmetric(a)?;
    let eig = symmetric_eigen(a)?;
    if eig.min() <= 0.0 {
        return Err(SpectralError::NotPositiveDefinite { eigenvalue: eig.min() });
    }
    Ok(eig)
}

/// Symmetric square root `S` with `S S = A`.
pub fn sqrt_spd(a: &Matrix) -> Result<Matrix, SpectralError> {
    let eig = spd_eigen(a)?;
    Ok(eig.reconstruct(f64::sqrt))
}

/// `A^{-1/2}`.
pub fn inv_sqrt_spd(a: &Matrix) -> Result<Matrix, SpectralError> {
    let eig = spd_eigen(a)?;
    Ok(eig.reconstruct(|l| 1.0 / l.sqrt()))
}

/// Lower-triangular Cholesky factor; fails on a non-positive pivot.
pub fn cholesky(a: &Matrix) -> Result<Matrix, SpectralError> {
    let n = check_square_finite(a)?;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 {
            return Err(SpectralError::NotPositiveDefinite { eigenvalue: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L L^T x = b` given the Cholesky factor.
pub fn cholesky_solve(l: &Matrix, b: &[f64], x: &mut [f64]) {
    let n = l.rows;
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
}

/// Relative eigenvalue floor below which an SPD matrix is treated as singular.
const SINGULAR_RATIO: f64 = 1e-14;

/// Inverse of a symmetric positive-definite matrix.
///
/// The spectrum is checked first; the inverse itself comes from Cholesky
/// solves with one step of iterative refinement per column.
pub fn inverse_spd(a: &Matrix) -> Result<Matrix, SpectralError> {
    let n = check_square_finite(a)?;
    check_symmetric(a)?;
    let eig = symmetric_eigen(a)?;
    if eig.min() <= 0.0 {
        if eig.min().abs() <= SINGULAR_RATIO * eig.max().abs().max(f64::MIN_POSITIVE) {
            return Err(SpectralError::Singular { eigenvalue: eig.min() });
        }
        return Err(SpectralError::NotPositiveDefinite { eigenvalue: eig.min() });
    }
    if eig.min() <= SINGULAR_RATIO * eig.max() {
        return Err(SpectralError::Singular { eigenvalue: eig.min() });
    }
    let sym = a.symmetrized();
    let l = cholesky(&sym)?;
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut dx = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        cholesky_solve(&l, &e, &mut x);
        sym.mul_vec_into(&x, &mut r);
        for i in 0..n {
            r[i] = e[i] - r[i];
        }
        cholesky_solve(&l, &r, &mut dx);
        for i in 0..n {
            inv[(i, j)] = x[i] + dx[i];
        }
    }
    // Not symmetrized: averaging with the transpose injects the forward
    // error (of order cond·eps·|A⁻¹|) into the residual A·A⁻¹ − I.
    Ok(inv)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        // Gram-Schmidt on a random square matrix.
        let mut cols: Vec<Vec<f64>> = Vec::new();
        while cols.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for c in &cols {
                let p = dot(&v, c);
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= p * ci;
                }
            }
            let nv = norm(&v);
            if nv > 1e-3 {
                cols.push(v.iter().map(|x| x / nv).collect());
            }
        }
        Matrix::from_fn(n, n, |i, j| cols[j][i])
    }

    pub(crate) fn random_spd(n: usize, log10_cond: f64, rng: &mut ChaCha8Rng) -> Matrix {
        let q = random_orthogonal(n, rng);
        let lambdas: Vec<f64> = (0..n)
            .map(|i| {
                let frac = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                10f64.powf(-log10_cond * frac)
            })
            .collect();
        let d = Matrix::from_diag(&lambdas);
        q.matmul(&d).matmul(&q.transpose()).symmetrized()
    }

    #[test]
    fn identity_and_diagonal_roots() {
        let s = sqrt_spd(&Matrix::identity(3)).unwrap();
        assert!(s.sub(&Matrix::identity(3)).max_abs() < 1e-15);
        let s = sqrt_spd(&Matrix::from_diag(&[4.0, 9.0])).unwrap();
        assert!(s.sub(&Matrix::from_diag(&[2.0, 3.0])).max_abs() < 1e-15);
        let inv = inverse_spd(&Matrix::from_diag(&[2.0, 4.0])).unwrap();
        assert!(inv.sub(&Matrix::from_diag(&[0.5, 0.25])).max_abs() < 1e-15);
        let inv = inverse_spd(&Matrix::identity(4)).unwrap();
        assert_eq!(inv, Matrix::identity(4));
    }

    #[test]
    fn random_spd_multiply_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..200 {
            let n = 1 + trial % 8;
            let cond = rng.random_range(0.0..6.0);
            let a = random_spd(n, cond, &mut rng);
            let s = sqrt_spd(&a).unwrap();
            assert!(s.symmetry_residual() < 1e-14);
            assert!(s.matmul(&s).sub(&a).max_abs() <= 1e-9, "sqrt residual n={n} cond=1e{cond}");
            let inv = inverse_spd(&a).unwrap();
            let r = a.matmul(&inv).sub(&Matrix::identity(n)).max_abs();
            assert!(r <= 1e-9, "inverse residual {r:e} n={n} cond=1e{cond}");
        }
    }

    #[test]
    fn eigen_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(5, 2.0, &mut rng);
        let eig = symmetric_eigen(&a).unwrap();
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(eig.reconstruct(|l| l).sub(&a).max_abs() < 1e-13);
    }

    #[test]
    fn non_spd_names_eigenvalue() {
        let a = Matrix::from_diag(&[1.0, -2.0]);
        match sqrt_spd(&a) {
            Err(SpectralError::NotPositiveDefinite { eigenvalue }) => assert_eq!(eigenvalue, -2.0),
            other => panic!("unexpected {other:?}"),
        }
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(sqrt_spd(&a), Err(SpectralError::NotSymmetric { .. })));
        let a = Matrix::from_diag(&[1.0, 0.0]);
        assert!(matches!(inverse_spd(&a), Err(SpectralError::Singular { .. })));
        assert!(matches!(inverse_spd(&Matrix::zeros(2, 3)), Err(SpectralError::NotSquare { .. })));
    }
}
