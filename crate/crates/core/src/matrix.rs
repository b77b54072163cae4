//! Dense row-major `f64` matrices.
//!
//! Binary operations panic on shape mismatch with a message naming both shapes;
//! shape checks at the API boundary (network, data loading) return [`Error`]
//! instead, so a panic here means a programmer error.
//!
//! Every product is computed by one kernel whose per-entry accumulation order is
//! fixed (`k` ascending), so the sequential and parallel paths agree bit for bit.

use std::fmt;

use crate::error::{Error, Result};
use crate::parallel;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Output rows handed to one task.
const ROW_BLOCK: usize = 16;
/// Inner-dimension tile; keeps the touched slab of the right operand in cache.
const K_BLOCK: usize = 128;
/// Column tile of the output.
const J_BLOCK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::new",
                left: format!("{rows}x{cols}"),
                right: format!("{} values", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged row {i}: {} vs {cols}", r.len());
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a 0-column matrix still has `rows` empty rows.
        (0..self.rows).map(move |i| self.row(i))
    }

    fn assert_same_shape(&self, other: &Matrix, op: &str) {
        assert!(
            self.shape() == other.shape(),
            "shape mismatch in {op}: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        self.matmul_impl(other, true)
    }

    /// `self · other` on the calling thread only.
    pub fn matmul_seq(&self, other: &Matrix) -> Matrix {
        self.matmul_impl(other, false)
    }

    fn matmul_impl(&self, other: &Matrix, allow_parallel: bool) -> Matrix {
        assert!(
            self.cols == other.rows,
            "shape mismatch in matmul: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let (m, inner, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        if m == 0 || n == 0 {
            return out;
        }
        let a = &self.data;
        let b = &other.data;
        let kernel = |block: usize, chunk: &mut [f64]| {
            let row0 = block * ROW_BLOCK;
            let nrows = chunk.len() / n;
            for j0 in (0..n).step_by(J_BLOCK) {
                let j1 = (j0 + J_BLOCK).min(n);
                for k0 in (0..inner).step_by(K_BLOCK) {
                    let k1 = (k0 + K_BLOCK).min(inner);
                    for r in 0..nrows {
                        let a_row = &a[(row0 + r) * inner..(row0 + r + 1) * inner];
                        let out_row = &mut chunk[r * n + j0..r * n + j1];
                        for k in k0..k1 {
                            let aik = a_row[k];
                            if aik == 0.0 {
                                continue;
                            }
                            let b_row = &b[k * n + j0..k * n + j1];
                            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                                *o += aik * bv;
                            }
                        }
                    }
                }
            }
        };
        if allow_parallel {
            parallel::for_each_chunk_mut(&mut out.data, ROW_BLOCK * n, m * n * inner, kernel);
        } else {
            parallel::for_each_chunk_mut_seq(&mut out.data, ROW_BLOCK * n, kernel);
        }
        out
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        self.transpose().matmul(other)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        self.matmul(&other.transpose())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Sum of squared entries.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn elementwise(&self, other: &Matrix, op: Elementwise) -> Matrix {
        self.assert_same_shape(other, "elementwise");
        let f = match op {
            Elementwise::Add => |a: f64, b: f64| a + b,
            Elementwise::Sub => |a: f64, b: f64| a - b,
            Elementwise::Mul => |a: f64, b: f64| a * b,
        };
        self.zip_map(other, f)
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.elementwise(other, Elementwise::Add)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.elementwise(other, Elementwise::Sub)
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Matrix) -> Matrix {
        self.elementwise(other, Elementwise::Mul)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|x| c * x)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        self.assert_same_shape(other, "zip_map");
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

    /// In-place `self += c · other`.
    pub fn add_scaled(&mut self, other: &Matrix, c: f64) {
        self.assert_same_shape(other, "add_scaled");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// Adds the `1 × cols` row vector `bias` to every row.
    pub fn add_row_broadcast(&mut self, bias: &Matrix) {
        assert!(
            bias.rows == 1 && bias.cols == self.cols,
            "shape mismatch in add_row_broadcast: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            bias.rows,
            bias.cols
        );
        let cols = self.cols;
        for i in 0..self.rows {
            for (x, &b) in self.data[i * cols..(i + 1) * cols].iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
    }

    /// Column sums as a `1 × cols` matrix.
    pub fn column_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for row in self.row_iter() {
            for (o, &x) in out.data.iter_mut().zip(row) {
                *o += x;
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.row_iter().map(|r| r.iter().sum()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    /// Gathers the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Matrix {
        assert!(
            self.cols == other.cols || self.rows == 0 || other.rows == 0,
            "shape mismatch in vstack: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let cols = if self.rows == 0 { other.cols } else { self.cols };
        let mut data = Vec::with_capacity((self.rows + other.rows) * cols);
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Matrix {
            rows: self.rows + other.rows,
            cols,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.assert_same_shape(other, "max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Index of the largest entry of each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.row_iter()
            .map(|r| {
                let mut best = 0;
                for (j, &x) in r.iter().enumerate() {
                    if x > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for row in self.row_iter().take(8) {
            writeln!(f, "  {row:?}")?;
        }
        if self.rows > 8 {
            writeln!(f, "  ... {} more rows", self.rows - 8)?;
        }
        write!(f, "]")
    }
}
