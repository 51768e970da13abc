//! Dense row-major tensors and the layer kernels built on them.
//!
//! Tensors are immutable values: kernels read their inputs and allocate a
//! fresh output. The buffer is reference counted, so cloning a tensor or
//! reshaping it is cheap and never copies samples. Every buffer, and the
//! im2col workspace of the convolution kernels, is accounted in the
//! [`ledger`].

pub mod activation;
pub mod conv;
pub(crate) mod gemm;
pub mod ledger;
pub mod linear;
pub mod norm;
pub mod pool;

use std::fmt;
use std::iter::Sum;
use std::sync::Arc;

use num_traits::Float;

use crate::error::{Error, Result};

pub use activation::{activation, activation_backward, Activation, DEFAULT_LEAKY_SLOPE};
pub use conv::{conv2d, Conv2dGeometry, Padding};
pub use ledger::{ledger_live, ledger_peak, ledger_reset, AllocationLedger};
pub use linear::{dense, dropout, sigmoid, softmax};
pub use norm::{batchnorm, BatchNormOutput, BnMode, LayerKind, LayerParams};
pub use pool::{adaptive_maxpool_time, avgpool2d, maxpool2d, Pool2d};

/// Scalar storage type. Training and all tests use `f64`; `f32` storage is
/// available for latency benchmarking.
pub trait Element:
    Float + Sum + Default + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` over strided matrices.
    ///
    /// # Safety
    /// Strides and extents must describe memory inside the given pointers.
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
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }

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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }

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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Ledger-tracked sample storage.
pub(crate) struct Buffer<T> {
    data: Vec<T>,
    ledger: Arc<ledger::LedgerInner>,
}

impl<T> Buffer<T> {
    fn new(data: Vec<T>) -> Self {
        let ledger = ledger::current();
        ledger.alloc(data.len() * std::mem::size_of::<T>());
        Buffer { data, ledger }
    }
}

/// Zero-filled kernel workspace, accounted like tensor storage.
pub(crate) fn scratch<T: Clone>(len: usize, value: T) -> Buffer<T> {
    Buffer::new(vec![value; len])
}

impl<T> std::ops::Deref for Buffer<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.data
    }
}

impl<T> std::ops::DerefMut for Buffer<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

impl<T: Clone> Clone for Buffer<T> {
    fn clone(&self) -> Self {
        Buffer::new(self.data.clone())
    }
}

impl<T> Drop for Buffer<T> {
    fn drop(&mut self) {
        self.ledger
            .free(self.data.len() * std::mem::size_of::<T>());
    }
}

#[derive(Clone)]
pub struct Tensor<T: Element = f64> {
    shape: Vec<usize>,
    data: Arc<Buffer<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "tensor",
                "data",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(Buffer::new(data)),
        })
    }

    /// Panics if `data` does not match `shape`; for kernel outputs whose size is
    /// computed from the shape.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: Arc::new(Buffer::new(data)),
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_parts(shape, vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_slice(shape: impl Into<Vec<usize>>, data: &[T]) -> Result<Self> {
        Self::new(shape, data.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.data.len()
    }

    pub fn bytes(&self) -> usize {
        self.numel() * std::mem::size_of::<T>()
    }

    pub fn data(&self) -> &[T] {
        &self.data.data
    }

    /// Mutable access; copies the buffer first if it is shared.
    pub fn make_mut(&mut self) -> &mut [T] {
        &mut Arc::make_mut(&mut self.data).data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.data.clone()
    }

    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data()[0])
    }

    /// Same samples under a new shape; the buffer is shared.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::dim(
                "reshape",
                "data",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    /// Collapses everything after the batch axis.
    pub fn flatten_batch(&self) -> Result<Self> {
        let b = *self
            .shape
            .first()
            .ok_or_else(|| Error::dim("flatten", "batch", "rank-0 tensor"))?;
        let rest = if b == 0 { 0 } else { self.numel() / b };
        self.reshape(vec![b, rest])
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data().iter().map(|v| U::from_f64(v.as_f64())).collect(),
        )
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data().iter().map(|&v| f(v)).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data().iter().copied().sum()
    }

    pub(crate) fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(Error::dim(
                op,
                "rank",
                format!("expected (batch, channels, height, width), got {:?}", self.shape),
            )),
        }
    }

    /// Rows of a batch-major tensor viewed as (batch, features).
    pub(crate) fn dims2(&self, op: &'static str) -> Result<[usize; 2]> {
        match self.shape[..] {
            [b, f] => Ok([b, f]),
            [b, ..] => Ok([b, if b == 0 { 0 } else { self.numel() / b }]),
            [] => Err(Error::dim(op, "rank", "rank-0 tensor")),
        }
    }

    pub(crate) fn same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                op,
                "shape",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    /// Bitwise equality of shape and samples.
    pub fn bit_eq(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data().iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &T::NAME)
            .field("head", &preview)
            .finish()
    }
}

impl<T: Element> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data() == other.data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn reshape_shares_storage() {
        let t = Tensor::<f64>::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let before = ledger_live();
        let r = t.reshape(vec![3, 2]).unwrap();
        assert_eq!(ledger_live(), before);
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(vec![4]).is_err());
    }

    #[test]
    fn make_mut_copies_shared_buffer() {
        let a = Tensor::<f64>::zeros(vec![3]);
        let mut b = a.clone();
        b.make_mut()[0] = 1.0;
        assert_eq!(a.data()[0], 0.0);
        assert_eq!(b.data()[0], 1.0);
    }

    #[test]
    fn cast_round_trips_representable_values() {
        let t = Tensor::<f64>::new(vec![3], vec![0.5, -2.0, 8.25]).unwrap();
        let back: Tensor<f64> = t.cast::<f32>().cast();
        assert!(back.bit_eq(&t));
    }
}
