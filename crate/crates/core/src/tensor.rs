//! Dense row-major tensors and matrices.
//!
//! Every shape computation in the crate follows one convention: flat storage
//! in row-major order, last index fastest. Matricization, Khatri-Rao row
//! ordering, the dimension tree and the generators all rely on it.
//!
//! Modes are 0-based throughout the Rust API.

use crate::error::{CpError, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CpError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Frobenius inner product `<self, other>`.
    pub fn inner(&self, other: &Matrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        let mut m = self.clone();
        m.scale(alpha);
        m
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        let mut m = self.clone();
        m.axpy(-1.0, other);
        m
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        gemm(self, false, other, false)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        gemm(self, true, other, false)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        gemm(self, false, other, true)
    }

    /// `self += alpha · a · b`, accumulated in place.
    pub fn add_matmul(&mut self, alpha: f64, a: &Matrix, b: &Matrix) {
        gemm_into(self, alpha, a, false, b, false, 1.0);
    }
}

/// `op(a) · op(b)` through the blocked kernel of `matrixmultiply`.
fn gemm(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Matrix {
    let m = if ta { a.cols } else { a.rows };
    let n = if tb { b.rows } else { b.cols };
    let mut c = Matrix::zeros(m, n);
    gemm_into(&mut c, 1.0, a, ta, b, tb, 0.0);
    c
}

/// `c ← alpha · op(a) · op(b) + beta · c`.
fn gemm_into(c: &mut Matrix, alpha: f64, a: &Matrix, ta: bool, b: &Matrix, tb: bool, beta: f64) {
    let (m, k, rsa, csa) = if ta {
        (a.cols, a.rows, 1, a.cols)
    } else {
        (a.rows, a.cols, a.cols, 1)
    };
    let (kb, n, rsb, csb) = if tb {
        (b.cols, b.rows, 1, b.cols)
    } else {
        (b.rows, b.cols, b.cols, 1)
    };
    assert_eq!(k, kb, "inner dimensions differ");
    assert_eq!((c.rows, c.cols), (m, n), "output shape differs");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.scale(beta);
        return;
    }
    // SAFETY: strides describe the exact extents of the owned buffers, and
    // `c` is a distinct mutable borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Elementwise product of two equally shaped matrices.
pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(CpError::ShapeMismatch(format!(
            "hadamard of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(Matrix { rows: a.rows, cols: a.cols, data })
}

/// Column-wise Kronecker product; row `i * J + j` of the result holds
/// `a[i, k] * b[j, k]`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(CpError::RankMismatch { expected: a.cols, found: b.cols });
    }
    let k = a.cols;
    let mut out = Matrix::zeros(a.rows * b.rows, k);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            let dst = &mut out.data[(i * b.rows + j) * k..(i * b.rows + j + 1) * k];
            for c in 0..k {
                dst[c] = arow[c] * brow[c];
            }
        }
    }
    Ok(out)
}

/// Khatri-Rao product of a sequence, first matrix slowest. An empty sequence
/// yields the `1 × rank` all-ones row.
pub fn khatri_rao_chain<'a>(mats: impl IntoIterator<Item = &'a Matrix>, rank: usize) -> Result<Matrix> {
    let mut acc = Matrix::filled(1, rank, 1.0);
    for m in mats {
        acc = khatri_rao(&acc, m)?;
    }
    Ok(acc)
}

/// `AᵀA`.
pub fn gram(a: &Matrix) -> Matrix {
    let mut g = a.t_matmul(a);
    symmetrize(&mut g);
    g
}

/// Overwrites the lower triangle with the upper so the result is bitwise
/// symmetric.
pub(crate) fn symmetrize(m: &mut Matrix) {
    let n = m.rows;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = m.get(i, j);
            m.set(j, i, v);
        }
    }
}

/// Order-N dense tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_dims(&dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(CpError::ShapeMismatch(format!(
                "{} values for dims {dims:?}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(CpError::NumericalFailure("non-finite tensor entry".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        validate_dims(&dims)?;
        let len = dims.iter().product();
        Ok(Self { dims, data: vec![0.0; len] })
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        let mut idx = vec![0usize; t.order()];
        for flat in 0..t.data.len() {
            t.data[flat] = f(&idx);
            increment_index(&mut idx, &t.dims);
        }
        Ok(t)
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.dims.len()
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter().zip(&self.dims).fold(0, |acc, (i, d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let f = self.flat_index(idx);
        self.data[f] = v;
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(CpError::ModeOutOfRange { mode, order: self.order() });
        }
        Ok(())
    }

    /// Mode-`mode` unfolding: `s_mode × Π_{m≠mode} s_m`, remaining indices
    /// linearized row-major in ascending mode order.
    pub fn matricize(&self, mode: usize) -> Result<Matrix> {
        self.check_mode(mode)?;
        let (left, s, right) = split_extent(&self.dims, mode);
        let cols = left * right;
        let mut out = Matrix::zeros(s, cols);
        for l in 0..left {
            for i in 0..s {
                let src = &self.data[(l * s + i) * right..(l * s + i + 1) * right];
                out.data[i * cols + l * right..i * cols + (l + 1) * right].copy_from_slice(src);
            }
        }
        Ok(out)
    }

    /// Inverse of [`DenseTensor::matricize`].
    pub fn from_matricized(dims: Vec<usize>, mode: usize, m: &Matrix) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        t.check_mode(mode)?;
        let (left, s, right) = split_extent(&t.dims, mode);
        if m.shape() != (s, left * right) {
            return Err(CpError::ShapeMismatch(format!(
                "unfolding {:?} does not match dims {:?} at mode {mode}",
                m.shape(),
                t.dims
            )));
        }
        let cols = left * right;
        for l in 0..left {
            for i in 0..s {
                t.data[(l * s + i) * right..(l * s + i + 1) * right]
                    .copy_from_slice(&m.data[i * cols + l * right..i * cols + (l + 1) * right]);
            }
        }
        Ok(t)
    }

    /// Mode-n product `T ×_mode A` with `A` of shape `J × s_mode`.
    pub fn mode_product(&self, mode: usize, a: &Matrix) -> Result<DenseTensor> {
        self.check_mode(mode)?;
        if a.cols() != self.dims[mode] {
            return Err(CpError::ShapeMismatch(format!(
                "matrix {:?} against extent {}",
                a.shape(),
                self.dims[mode]
            )));
        }
        let unfolded = a.matmul(&self.matricize(mode)?);
        let mut dims = self.dims.clone();
        dims[mode] = a.rows();
        Self::from_matricized(dims, mode, &unfolded)
    }

    pub(crate) fn from_parts_unchecked(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(CpError::ShapeMismatch(format!("invalid dims {dims:?}")));
    }
    Ok(())
}

/// `(Π_{m<mode} s_m, s_mode, Π_{m>mode} s_m)`.
pub(crate) fn split_extent(dims: &[usize], mode: usize) -> (usize, usize, usize) {
    let left = dims[..mode].iter().product();
    let right = dims[mode + 1..].iter().product();
    (left, dims[mode], right)
}

/// Advances a row-major multi-index in place.
pub(crate) fn increment_index(idx: &mut [usize], dims: &[usize]) {
    for m in (0..idx.len()).rev() {
        idx[m] += 1;
        if idx[m] < dims[m] {
            return;
        }
        idx[m] = 0;
    }
}
