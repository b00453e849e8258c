//! Dense row-major matrices of `f64` and the multiplication kernels used
//! throughout the crate.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// A dense `rows x cols` matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for c in 0..self.cols.min(8) {
                write!(f, "{:>12.6} ", self[(r, c)])?;
            }
            if self.cols > 8 {
                write!(f, "...")?;
            }
            writeln!(f)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
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

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(alloc::format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row slices. Panics if the rows are ragged.
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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        // Blocked to keep both sides in cache for tall/wide operands.
        const BLOCK: usize = 32;
        for r0 in (0..self.rows).step_by(BLOCK) {
            for c0 in (0..self.cols).step_by(BLOCK) {
                for r in r0..(r0 + BLOCK).min(self.rows) {
                    for c in c0..(c0 + BLOCK).min(self.cols) {
                        out.data[c * self.rows + r] = self.data[r * self.cols + c];
                    }
                }
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.require_same_shape(other, "elementwise")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    fn require_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shapes(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.require_same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b).expect("shape checked"))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.require_same_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b).expect("shape checked"))
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.require_same_shape(other, "hadamard")?;
        Ok(self.zip_map(other, |a, b| a * b).expect("shape checked"))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.require_same_shape(other, "axpy")?;
        axpy_slice(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.require_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds `value` to every diagonal entry of a square matrix.
    pub fn add_diagonal(&mut self, value: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += value;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `‖self − other‖_F / max(‖other‖_F, floor)`.
    pub fn relative_distance(&self, other: &Matrix, floor: f64) -> f64 {
        assert_eq!(self.shape(), other.shape());
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        libm::sqrt(diff) / other.frobenius_norm().max(floor)
    }

    /// Checked product `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::shapes("matmul", self.shape(), rhs.shape()));
        }
        Ok(matmul_nn(self, rhs))
    }

    /// Checked product `self · rhsᵀ`.
    pub fn matmul_nt(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::shapes("matmul_nt", self.shape(), rhs.shape()));
        }
        Ok(matmul_nt(self, rhs))
    }

    /// Checked product `selfᵀ · rhs`.
    pub fn matmul_tn(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::shapes("matmul_tn", self.shape(), rhs.shape()));
        }
        Ok(matmul_tn(self, rhs))
    }

    /// Symmetric Gramian `self · selfᵀ`.
    pub fn gram(&self) -> Matrix {
        let n = self.rows;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let ri = self.row(i);
            for j in 0..=i {
                let v = dot(ri, self.row(j));
                out.data[i * n + j] = v;
                out.data[j * n + i] = v;
            }
        }
        out
    }

    /// Stacks matrices vertically. All parts must share the column count.
    pub fn concat_rows(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::shapes("concat_rows", (rows, cols), p.shape()));
            }
            rows += p.rows;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Places matrices side by side. All parts must share the row count.
    pub fn concat_cols(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        let mut cols = 0;
        for p in parts {
            if p.rows != rows {
                return Err(Error::shapes("concat_cols", (rows, cols), p.shape()));
            }
            cols += p.cols;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Matrix> {
        if start > end || end > self.rows {
            return Err(Error::invalid(alloc::format!(
                "row slice {start}..{end} out of range for {} rows",
                self.rows
            )));
        }
        Ok(Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        })
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Matrix> {
        if start > end || end > self.cols {
            return Err(Error::invalid(alloc::format!(
                "column slice {start}..{end} out of range for {} columns",
                self.cols
            )));
        }
        let width = end - start;
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Ok(Matrix {
            rows: self.rows,
            cols: width,
            data,
        })
    }

    /// Copies the columns listed in `indices` into a new matrix.
    pub fn select_cols(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, indices.len());
        for r in 0..self.rows {
            let src = self.row(r);
            let dst = out.row_mut(r);
            for (d, &c) in dst.iter_mut().zip(indices) {
                *d = src[c];
            }
        }
        out
    }

    /// Index of the largest entry of every column.
    pub fn argmax_cols(&self) -> Vec<usize> {
        (0..self.cols)
            .map(|c| {
                let mut best = 0;
                for r in 1..self.rows {
                    if self[(r, c)] > self[(best, c)] {
                        best = r;
                    }
                }
                best
            })
            .collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let k = 4 * i;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for k in 4 * chunks..n {
        s += a[k] * b[k];
    }
    s
}

#[inline]
pub(crate) fn axpy_slice(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `a · b`, shapes assumed conformable.
pub(crate) fn matmul_nn(a: &Matrix, b: &Matrix) -> Matrix {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip != 0.0 {
                axpy_slice(aip, &b.data[p * n..(p + 1) * n], orow);
            }
        }
    }
    out
}

/// `a · bᵀ`, shapes assumed conformable.
pub(crate) fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    let (m, n) = (a.rows, b.rows);
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            out.data[i * n + j] = dot(arow, b.row(j));
        }
    }
    out
}

/// `aᵀ · b`, shapes assumed conformable.
pub(crate) fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    let (k, m, n) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(m, n);
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &api) in arow.iter().enumerate() {
            if api != 0.0 {
                axpy_slice(api, brow, &mut out.data[i * n..(i + 1) * n]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a[(i, p)] * b[(p, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    #[test]
    fn identity_product() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(Matrix::identity(2).matmul(&m).unwrap(), m);
    }

    #[test]
    fn row_times_column_sums() {
        let a = Matrix::from_rows(&[&[1.0, 1.0]]);
        let b = Matrix::from_rows(&[&[1.0], &[1.0]]);
        assert_eq!(a.matmul(&b).unwrap(), Matrix::from_rows(&[&[2.0]]));
    }

    #[test]
    fn random_product_matches_triple_loop() {
        let mut rng = Rng64::seed(3);
        let a = rng.normal_matrix(3, 4);
        let b = rng.normal_matrix(4, 2);
        let fast = a.matmul(&b).unwrap();
        let slow = naive(&a, &b);
        assert!(fast.relative_distance(&slow, 1e-300) < 1e-14);
    }

    #[test]
    fn transposed_variants_agree() {
        let mut rng = Rng64::seed(4);
        let a = rng.normal_matrix(5, 7);
        let b = rng.normal_matrix(6, 7);
        let c = rng.normal_matrix(5, 3);
        assert!(a.matmul_nt(&b).unwrap().relative_distance(&naive(&a, &b.transpose()), 1e-300) < 1e-14);
        assert!(a.matmul_tn(&c).unwrap().relative_distance(&naive(&a.transpose(), &c), 1e-300) < 1e-14);
        assert!(a.gram().relative_distance(&naive(&a, &a.transpose()), 1e-300) < 1e-14);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let err = Matrix::zeros(2, 3).matmul(&Matrix::zeros(2, 3)).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("2x3") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let mut rng = Rng64::seed(5);
        let a = rng.normal_matrix(2, 3);
        let b = rng.normal_matrix(4, 3);
        let s = Matrix::concat_rows(&[&a, &b]).unwrap();
        assert_eq!(s.slice_rows(0, 2).unwrap(), a);
        assert_eq!(s.slice_rows(2, 6).unwrap(), b);
        let c = rng.normal_matrix(2, 5);
        let h = Matrix::concat_cols(&[&a, &c]).unwrap();
        assert_eq!(h.slice_cols(0, 3).unwrap(), a);
        assert_eq!(h.slice_cols(3, 8).unwrap(), c);
    }

    proptest::proptest! {
        #[test]
        fn matmul_is_associative(seed in 0u64..1000, m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6) {
            let mut rng = Rng64::seed(seed);
            let a = rng.normal_matrix(m, k);
            let b = rng.normal_matrix(k, n);
            let c = rng.normal_matrix(n, p);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = a.frobenius_norm() * b.frobenius_norm() * c.frobenius_norm();
            proptest::prop_assert!(left.relative_distance(&right, 1e-300) * right.frobenius_norm() <= 1e-12 * scale.max(1.0));
        }
    }
}
