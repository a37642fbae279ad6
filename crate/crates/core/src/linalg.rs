//! Dense row-major matrices.
//!
//! Vectors are plain `Vec<T>`/slices in the public API; a `Matrix` with one
//! column (or one row) is used wherever a vector has to live on the tape.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// `n x 1` column.
    pub fn column(data: Vec<T>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    /// `1 x n` row.
    pub fn row(data: Vec<T>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1 x 1` matrix.
    pub fn item(&self) -> T {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar matrix");
        self.data[0]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Self {
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

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Matrix product `op(self) * op(other)` where `op` optionally transposes.
    pub fn matmul_t(&self, transpose_self: bool, other: &Self, transpose_other: bool) -> Self {
        let mut out = Self::zeros(0, 0);
        self.matmul_into(transpose_self, other, transpose_other, T::zero(), &mut out);
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        self.matmul_t(false, other, false)
    }

    /// `out <- op(self) * op(other) + beta * out`; `out` is resized when `beta` is zero.
    pub fn matmul_into(
        &self,
        transpose_self: bool,
        other: &Self,
        transpose_other: bool,
        beta: T,
        out: &mut Self,
    ) {
        let (m, k, a_rs, a_cs) = if transpose_self {
            (self.cols, self.rows, 1, self.cols as isize)
        } else {
            (self.rows, self.cols, self.cols as isize, 1)
        };
        let (k2, n, b_rs, b_cs) = if transpose_other {
            (other.cols, other.rows, 1, other.cols as isize)
        } else {
            (other.rows, other.cols, other.cols as isize, 1)
        };
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        if beta == T::zero() {
            if out.shape() != (m, n) {
                *out = Self::zeros(m, n);
            }
        } else {
            assert_eq!(out.shape(), (m, n), "matmul accumulator shape mismatch");
        }
        T::gemm(
            m,
            k,
            n,
            T::one(),
            (&self.data, a_rs, a_cs),
            (&other.data, b_rs, b_cs),
            beta,
            (&mut out.data, n as isize, 1),
        );
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(a.rows(), b.cols(), |r, c| {
            (0..a.cols()).map(|i| a.get(r, i) * b.get(i, c)).sum()
        })
    }

    #[test]
    fn products_match_naive_triple_loop() {
        let a = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.3 - 1.0);
        let b = Matrix::from_fn(4, 2, |r, c| (r as f64 - c as f64).sin());
        let expect = naive(&a, &b);
        for (x, y) in a.matmul(&b).as_slice().iter().zip(expect.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let at = a.transpose();
        let bt = b.transpose();
        let via_t = at.matmul_t(true, &bt, true);
        for (x, y) in via_t.as_slice().iter().zip(expect.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn accumulate_adds_to_existing() {
        let a = Matrix::<f64>::filled(2, 2, 1.0);
        let mut out = Matrix::filled(2, 2, 10.0);
        a.matmul_into(false, &a, false, 1.0, &mut out);
        assert!(out.as_slice().iter().all(|&v| v == 12.0));
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert!(Matrix::<f64>::from_vec(2, 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn f32_kernel_agrees() {
        let a = Matrix::<f32>::from_fn(5, 3, |r, c| (r + c) as f32);
        let b = Matrix::<f32>::from_fn(3, 2, |r, c| (r * c) as f32 + 0.5);
        let a64: Matrix<f64> = a.cast();
        let b64: Matrix<f64> = b.cast();
        let p: Matrix<f64> = a.matmul(&b).cast();
        assert_eq!(p, naive(&a64, &b64));
    }
}
