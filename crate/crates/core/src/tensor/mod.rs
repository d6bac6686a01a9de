//! Dense tensors and the differentiable primitives the detector is built from.
//!
//! Layout is row-major with the width axis fastest. Feature maps are either
//! rank 3 (`c × h × w`) or rank 4 (`b × c × h × w`); every primitive accepts
//! both and treats rank 3 as a batch of one.

mod activation;
mod conv;
mod gemm;
mod norm;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

pub use activation::{leaky_relu, leaky_relu_backward, leaky_relu_pinned, LEAKY_SLOPE};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams};
pub use norm::{
    batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormParams, NormMode, BN_EPSILON,
    BN_MOMENTUM,
};

use crate::error::{Error, Result};

/// Real element type of a tensor. `f32` is used for training and inference,
/// `f64` for gradient verification.
pub trait Scalar:
    Float + Default + Debug + AddAssign + SubAssign + MulAssign + Sum + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` for strided row/column layouts.
    ///
    /// # Safety
    /// All pointers must be valid for every index addressed by the given
    /// extents and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> f32 {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> f64 {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} holds {len} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// `(batch, channels, height, width)`; a rank-3 tensor reports batch 1.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((1, c, h, w)),
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::InvalidArgument(format!(
                "expected a rank 3 or 4 feature map, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                actual: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Elementwise sum; both operands must have identical shapes.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        add_elementwise(self, other)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Contiguous slice of one batch item of a rank-4 tensor (or the whole
    /// rank-3 tensor for index 0).
    pub fn item(&self, index: usize) -> &[T] {
        let per = self.item_len();
        &self.data[index * per..(index + 1) * per]
    }

    pub fn item_mut(&mut self, index: usize) -> &mut [T] {
        let per = self.item_len();
        &mut self.data[index * per..(index + 1) * per]
    }

    fn item_len(&self) -> usize {
        if self.shape.len() == 4 {
            self.shape[1..].iter().product()
        } else {
            self.data.len()
        }
    }

    /// Stacks equally shaped rank-3 tensors into one rank-4 batch.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::ShapeMismatch {
                    expected: first.shape.clone(),
                    actual: t.shape.clone(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::from_vec(&shape, data)
    }

    /// Batch item `index` of a rank-4 tensor as a rank-3 tensor.
    pub fn unstack(&self, index: usize) -> Result<Tensor<T>> {
        let (b, c, h, w) = self.dims4()?;
        if index >= b {
            return Err(Error::InvalidArgument(format!(
                "batch index {index} out of range for batch {b}"
            )));
        }
        Tensor::from_vec(&[c, h, w], self.item(index).to_vec())
    }
}

/// Elementwise `a + b`.
pub fn add_elementwise<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            expected: a.shape.clone(),
            actual: b.shape.clone(),
        });
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
    })
}
