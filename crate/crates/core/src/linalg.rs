//! Small dense row-major matrices.
//!
//! Factor dimensions are tiny (D ≤ 3 in practice), so everything here is
//! straightforward O(n³) code without blocking.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::math;

#[derive(Clone, Debug, PartialEq)]
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

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    /// Returns `None` for ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return None;
        }
        Some(Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
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

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Matrix) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }

    /// `self · selfᵀ`
    pub fn outer_self(&self) -> Self {
        self.matmul(&self.transpose())
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(v, &mut out);
        out
    }

    pub fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// `selfᵀ v`
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.tr_matvec_into(v, &mut out);
        out
    }

    pub fn tr_matvec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            for j in 0..self.cols {
                out[j] += self.data[i * self.cols + j] * vi;
            }
        }
    }

    pub fn add(&self, rhs: &Matrix) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Matrix) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * k).collect(),
        }
    }

    pub fn add_scaled_in_place(&mut self, rhs: &Matrix, k: f64) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += k * b;
        }
    }

    /// `(A + Aᵀ) / 2`
    pub fn symmetrized(&self) -> Self {
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                s[(i, j)] = 0.5 * (self[(i, j)] + self[(j, i)]);
            }
        }
        s
    }

    /// `A + Aᵀ`
    pub fn plus_transpose(&self) -> Self {
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                s[(i, j)] = self[(i, j)] + self[(j, i)];
            }
        }
        s
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|x| x * x).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(math::abs(*x)))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Leading `n` columns (the `C̄` block of a volatility matrix).
    pub fn leading_columns(&self, n: usize) -> Self {
        let mut out = Self::zeros(self.rows, n);
        for i in 0..self.rows {
            for j in 0..n {
                out[(i, j)] = self[(i, j)];
            }
        }
        out
    }

    /// Lower Cholesky factor of a symmetric positive-definite matrix, or the
    /// index and value of the first non-positive pivot.
    pub fn cholesky(&self) -> Result<Matrix, (usize, f64)> {
        assert!(self.is_square());
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err((j, d));
            }
            let ljj = math::sqrt(d);
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut v = self[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / ljj;
            }
        }
        Ok(l)
    }

    /// Cholesky for positive semi-definite input: pivots below `tol · max_diag`
    /// are treated as zero and their column is zeroed.
    pub fn cholesky_psd(&self, tol: f64) -> Matrix {
        let n = self.rows;
        let scale = (0..n).fold(0.0_f64, |m, i| m.max(math::abs(self[(i, i)])));
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= tol * scale {
                continue;
            }
            let ljj = math::sqrt(d);
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut v = self[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / ljj;
            }
        }
        l
    }

    /// Solves `L x = b` for lower-triangular `self`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.rows;
        let mut x = b.to_vec();
        for i in 0..n {
            let mut v = x[i];
            for k in 0..i {
                v -= self[(i, k)] * x[k];
            }
            x[i] = v / self[(i, i)];
        }
        x
    }

    /// Solves `Lᵀ x = b` for lower-triangular `self`.
    pub fn solve_lower_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.rows;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut v = x[i];
            for k in i + 1..n {
                v -= self[(k, i)] * x[k];
            }
            x[i] = v / self[(i, i)];
        }
        x
    }

    /// Inverse of a lower-triangular matrix (lower-triangular again).
    pub fn lower_inverse(&self) -> Matrix {
        let n = self.rows;
        let mut inv = Self::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            let col = self.solve_lower(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }

    /// LU with partial pivoting; returns `(lu, perm, sign)` or `None` when an
    /// exactly zero pivot shows up.
    fn lu(&self) -> Option<(Matrix, Vec<usize>, f64)> {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| math::abs(a[(i, k)]).total_cmp(&math::abs(a[(j, k)])))
                .unwrap_or(k);
            if a[(p, k)] == 0.0 {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(p * n + j, k * n + j);
                }
                perm.swap(p, k);
                sign = -sign;
            }
            for i in k + 1..n {
                let f = a[(i, k)] / a[(k, k)];
                a[(i, k)] = f;
                for j in k + 1..n {
                    let v = a[(k, j)];
                    a[(i, j)] -= f * v;
                }
            }
        }
        Some((a, perm, sign))
    }

    pub fn determinant(&self) -> f64 {
        match self.lu() {
            Some((lu, _, sign)) => (0..self.rows).fold(sign, |d, i| d * lu[(i, i)]),
            None => 0.0,
        }
    }

    pub fn inverse(&self) -> Option<Matrix> {
        let n = self.rows;
        let (lu, perm, _) = self.lu()?;
        let mut inv = Self::zeros(n, n);
        for j in 0..n {
            let mut x: Vec<f64> = (0..n).map(|i| if perm[i] == j { 1.0 } else { 0.0 }).collect();
            for i in 0..n {
                for k in 0..i {
                    x[i] -= lu[(i, k)] * x[k];
                }
            }
            for i in (0..n).rev() {
                for k in i + 1..n {
                    x[i] -= lu[(i, k)] * x[k];
                }
                x[i] /= lu[(i, i)];
            }
            for i in 0..n {
                inv[(i, j)] = x[i];
            }
        }
        Some(inv)
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let n = self.rows;
        let mut a = self.symmetrized();
        for _sweep in 0..64 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off < 1e-30 * (1.0 + a.frobenius_norm()) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (math::abs(theta) + math::sqrt(theta * theta + 1.0));
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / math::sqrt(t * t + 1.0);
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd3() -> Matrix {
        Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ])
        .unwrap()
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = spd3();
        let l = a.cholesky().unwrap();
        let back = l.outer_self();
        assert!(back.sub(&a).frobenius_norm() < 1e-14);
        for i in 0..3 {
            for j in i + 1..3 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(a.cholesky().is_err());
    }

    #[test]
    fn triangular_solves() {
        let l = spd3().cholesky().unwrap();
        let b = [1.0, -2.0, 0.5];
        let x = l.solve_lower(&b);
        let back = l.matvec(&x);
        for i in 0..3 {
            assert_relative_eq!(back[i], b[i], epsilon = 1e-14);
        }
        let y = l.solve_lower_transpose(&b);
        let back = l.transpose().matvec(&y);
        for i in 0..3 {
            assert_relative_eq!(back[i], b[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn inverse_and_determinant() {
        let a = spd3();
        let inv = a.inverse().unwrap();
        let id = a.matmul(&inv);
        assert!(id.sub(&Matrix::identity(3)).max_abs() < 1e-14);
        // 4(6-0.04) - 1(2-0.1) + 0.5(0.2-1.5)
        assert_relative_eq!(a.determinant(), 4.0 * 5.96 - 1.9 - 0.65, epsilon = 1e-13);
        assert!(Matrix::zeros(2, 2).inverse().is_none());
    }

    #[test]
    fn jacobi_eigenvalues() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let ev = a.symmetric_eigenvalues();
        assert_relative_eq!(ev[0], 1.0, epsilon = 1e-13);
        assert_relative_eq!(ev[1], 3.0, epsilon = 1e-13);
        let ev3 = spd3().symmetric_eigenvalues();
        let sum: f64 = ev3.iter().sum();
        assert_relative_eq!(sum, spd3().trace(), epsilon = 1e-12);
    }

    #[test]
    fn psd_cholesky_handles_rank_deficiency() {
        let v = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let a = v.outer_self();
        let l = a.cholesky_psd(1e-12);
        assert!(l.outer_self().sub(&a).max_abs() < 1e-12);
    }
}
