//! Dense row-major tensor used by every numeric module in the crate.

mod scalar;

pub use scalar::{s, Scalar};

use std::fmt;

/// Dense tensor with row-major layout (last axis is contiguous).
///
/// Video activations use the 5-axis convention `(N, C, D, H, W)` where `D`
/// is time depth; matrices are `(rows, cols)`. Shape is dynamic so the same
/// type serves both.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::ZERO; n] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    /// Wraps an existing buffer. Panics if the element count does not match.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "shape {:?} needs {} elements, got {}", shape, n, data.len());
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.data.len(), "reshape {:?} -> {:?} changes element count", self.shape, shape);
        Tensor { shape: shape.to_vec(), data: self.data.clone() }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination; shapes must match exactly.
    pub fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip shape mismatch");
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor { shape: self.shape.clone(), data }
    }

    pub fn fill(&mut self, value: T) {
        for v in &mut self.data {
            *v = value;
        }
    }

    /// Sum of all elements, accumulated in f64 for shape-independent accuracy.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    /// Flat offset of `(n, c, d, h, w)` in a 5-axis tensor.
    #[inline]
    pub fn offset5(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 5);
        let (cs, ds, hs, ws) = (self.shape[1], self.shape[2], self.shape[3], self.shape[4]);
        (((n * cs + c) * ds + d) * hs + h) * ws + w
    }

    #[inline]
    pub fn at5(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> T {
        self.data[self.offset5(n, c, d, h, w)]
    }

    #[inline]
    pub fn at5_mut(&mut self, n: usize, c: usize, d: usize, h: usize, w: usize) -> &mut T {
        let i = self.offset5(n, c, d, h, w);
        &mut self.data[i]
    }

    /// Matrix product for 2-axis tensors: (m,k) x (k,n) -> (m,n).
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape.len(), 2, "matmul lhs must be 2-d");
        assert_eq!(rhs.shape.len(), 2, "matmul rhs must be 2-d");
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        assert_eq!(k, k2, "matmul inner dims differ: {} vs {}", k, k2);
        let mut out = Tensor::zeros(&[m, n]);
        if m * k * n > 0 {
            unsafe {
                T::gemm_strided(
                    m, k, n,
                    T::ONE,
                    self.data.as_ptr(), k as isize, 1,
                    rhs.data.as_ptr(), n as isize, 1,
                    T::ZERO,
                    out.data.as_mut_ptr(), n as isize, 1,
                );
            }
        }
        out
    }

    /// Converts the element type, rounding through f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} elements]", self.data.len())
        }
    }
}
