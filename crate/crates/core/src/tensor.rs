//! Rank-4 tensors in NCHW layout and a small dense-matrix type.
//!
//! Every activation in the crate is a [`Tensor`]: a contiguous
//! row-major buffer indexed as `(n, c, h, w)`. The element at
//! `(n, c, y, x)` lives at `data[((n * C + c) * H + y) * W + x]`.
//! There is no broadcasting and no views; operations allocate their
//! outputs. [`Matrix`] backs the matmul lowering used by pointwise
//! convolutions and the fully connected head.

pub mod io;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dimensions of a rank-4 tensor: batch, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    /// Total element count.
    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of `(n, c, y, x)`. Callers stay in bounds.
    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::InvalidShape(format!(
                "all extents must be positive, got {self}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 tensor over a [`Scalar`] element type.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Shape,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Allocates a zero-filled tensor.
    pub fn zeros(shape: Shape) -> Result<Tensor<S>> {
        shape.validate()?;
        Ok(Tensor {
            shape,
            data: vec![S::zero(); shape.len()],
        })
    }

    /// Allocates a tensor filled with `v`.
    pub fn filled(shape: Shape, v: S) -> Result<Tensor<S>> {
        shape.validate()?;
        Ok(Tensor {
            shape,
            data: vec![v; shape.len()],
        })
    }

    /// Wraps an existing buffer; its length must match the shape.
    pub fn from_vec(shape: Shape, data: Vec<S>) -> Result<Tensor<S>> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::DataLength {
                expected: shape.len(),
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> S {
        self.data[self.shape.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: S) {
        let i = self.shape.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Reinterprets the buffer under a new shape with equal length.
    pub fn reshape(&self, shape: Shape) -> Result<Tensor<S>> {
        shape.validate()?;
        if shape.len() != self.shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip_with(other, |a, b| a * b)
    }

    /// Elementwise max(x, 0).
    pub fn relu(&self) -> Tensor<S> {
        self.map(|v| if v > S::zero() { v } else { S::zero() })
    }

    /// Multiplies every element by `k`.
    pub fn scale(&self, k: S) -> Tensor<S> {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor<S>, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "elementwise operands differ: {} vs {}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    /// Converts elements to another scalar width.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| T::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}

/// Dense row-major matrix used by the matmul lowering.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S = f64> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Result<Matrix<S>> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidShape(format!(
                "matrix extents must be positive, got {rows}x{cols}"
            )));
        }
        Ok(Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Matrix<S>> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidShape(format!(
                "matrix extents must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DataLength {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Result<Matrix<S>> {
        let mut m = Matrix::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }
}

/// Multiplies an `R x K` matrix by a `K x S` matrix.
pub fn matmul<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Result<Matrix<S>> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch(format!(
            "matmul inner dimensions differ: {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols)?;
    matmul_slices(&a.data, a.rows, a.cols, &b.data, b.cols, &mut out.data);
    Ok(out)
}

/// out[i][j] = sum_k a[i][k] * b[k][j].
///
/// The accumulation runs in ascending k for every output element, so
/// the result is bit-identical to the naive three-loop form. The
/// pointwise-convolution lowering relies on that ordering to match
/// the direct convolution exactly.
pub(crate) fn matmul_slices<S: Scalar>(
    a: &[S],
    ar: usize,
    ac: usize,
    b: &[S],
    bc: usize,
    out: &mut [S],
) {
    debug_assert_eq!(a.len(), ar * ac);
    debug_assert_eq!(b.len(), ac * bc);
    debug_assert_eq!(out.len(), ar * bc);
    for v in out.iter_mut() {
        *v = S::zero();
    }
    for i in 0..ar {
        let out_row = &mut out[i * bc..(i + 1) * bc];
        for k in 0..ac {
            let aik = a[i * ac + k];
            let b_row = &b[k * bc..(k + 1) * bc];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bv;
            }
        }
    }
}

/// out[i][j] = sum_k a[i][k] * b[j][k] (B transposed).
pub(crate) fn matmul_nt<S: Scalar>(
    a: &[S],
    ar: usize,
    ac: usize,
    b: &[S],
    br: usize,
    out: &mut [S],
) {
    debug_assert_eq!(a.len(), ar * ac);
    debug_assert_eq!(b.len(), br * ac);
    debug_assert_eq!(out.len(), ar * br);
    for i in 0..ar {
        let a_row = &a[i * ac..(i + 1) * ac];
        for j in 0..br {
            let b_row = &b[j * ac..(j + 1) * ac];
            let mut acc = S::zero();
            for k in 0..ac {
                acc = acc + a_row[k] * b_row[k];
            }
            out[i * br + j] = acc;
        }
    }
}

/// out[i][j] = sum_k a[k][i] * b[k][j] (A transposed).
pub(crate) fn matmul_tn<S: Scalar>(
    a: &[S],
    ar: usize,
    ac: usize,
    b: &[S],
    bc: usize,
    out: &mut [S],
) {
    debug_assert_eq!(a.len(), ar * ac);
    debug_assert_eq!(b.len(), ar * bc);
    debug_assert_eq!(out.len(), ac * bc);
    for v in out.iter_mut() {
        *v = S::zero();
    }
    for k in 0..ar {
        let a_row = &a[k * ac..(k + 1) * ac];
        let b_row = &b[k * bc..(k + 1) * bc];
        for i in 0..ac {
            let aki = a_row[i];
            let out_row = &mut out[i * bc..(i + 1) * bc];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aki * bv;
            }
        }
    }
}
