//! Dense rank-4 tensors laid out as (batch, channel, joint, coordinate).

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Extents of a rank-4 tensor: batch, channel, joint, coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dims(pub [usize; 4]);

impl Dims {
    pub const SCALAR: Dims = Dims([1, 1, 1, 1]);

    pub fn new(batch: usize, channel: usize, joint: usize, coord: usize) -> Self {
        Dims([batch, channel, joint, coord])
    }

    pub fn batch(&self) -> usize {
        self.0[0]
    }

    pub fn channel(&self) -> usize {
        self.0[1]
    }

    pub fn joint(&self) -> usize {
        self.0[2]
    }

    pub fn coord(&self) -> usize {
        self.0[3]
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one batch item.
    pub fn item_len(&self) -> usize {
        self.0[1] * self.0[2] * self.0[3]
    }

    /// Elements in one channel plane.
    pub fn plane(&self) -> usize {
        self.0[2] * self.0[3]
    }

    pub fn with_channel(self, c: usize) -> Self {
        Dims([self.0[0], c, self.0[2], self.0[3]])
    }

    pub fn is_scalar(&self) -> bool {
        *self == Self::SCALAR
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [b, c, j, d] = self.0;
        write!(f, "({b}, {c}, {j}, {d})")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: Dims) -> Self {
        Tensor {
            dims,
            data: vec![T::zero(); dims.len()],
        }
    }

    pub fn full(dims: Dims, v: T) -> Self {
        Tensor {
            dims,
            data: vec![v; dims.len()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self::full(Dims::SCALAR, v)
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Contract(format!(
                "tensor {dims} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [_, c, j, d] = dims.0;
        let data = (0..dims.len())
            .map(|i| {
                let q = i % d;
                let p = (i / d) % j;
                let ch = (i / (d * j)) % c;
                let b = i / (d * j * c);
                f([b, ch, p, q])
            })
            .collect();
        Tensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, idx: [usize; 4]) -> usize {
        let [_, c, j, d] = self.dims.0;
        ((idx[0] * c + idx[1]) * j + idx[2]) * d + idx[3]
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// The `b`-th batch item as a flat slice.
    pub fn item(&self, b: usize) -> &[T] {
        let n = self.dims.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn reshape(mut self, dims: Dims) -> Result<Self> {
        if dims.len() != self.data.len() {
            return Err(Error::shape("reshape", self.dims, dims));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape("add_assign", self.dims, other.dims));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}
