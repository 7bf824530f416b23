use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type the network engine runs on. Training uses `f32`; gradient
/// checks run the same code in `f64`.
pub trait Real:
    Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Dense NCHW tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], v: T) -> Self {
        Self {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    pub fn h(&self) -> usize {
        self.shape[2]
    }
    pub fn w(&self) -> usize {
        self.shape[3]
    }
    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
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

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }
    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: T) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Self {
        assert_eq!(a.n(), b.n());
        assert_eq!((a.h(), a.w()), (b.h(), b.w()));
        let mut out = Self::zeros([a.n(), a.c() + b.c(), a.h(), a.w()]);
        for i in 0..a.n() {
            let dst = out.sample_mut(i);
            let (left, right) = dst.split_at_mut(a.sample_len());
            left.copy_from_slice(a.sample(i));
            right.copy_from_slice(b.sample(i));
        }
        out
    }

    /// Splits off the first `c` channels; inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, c: usize) -> (Tensor<T>, Tensor<T>) {
        assert!(c <= self.c());
        let hw = self.h() * self.w();
        let mut a = Self::zeros([self.n(), c, self.h(), self.w()]);
        let mut b = Self::zeros([self.n(), self.c() - c, self.h(), self.w()]);
        for i in 0..self.n() {
            let s = self.sample(i);
            a.sample_mut(i).copy_from_slice(&s[..c * hw]);
            b.sample_mut(i).copy_from_slice(&s[c * hw..]);
        }
        (a, b)
    }

    /// Stacks single-sample tensors (or batches) along the batch axis.
    pub fn stack(parts: &[Tensor<T>]) -> Self {
        assert!(!parts.is_empty());
        let [_, c, h, w] = parts[0].shape;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut n = 0;
        for p in parts {
            assert_eq!(&p.shape[1..], &[c, h, w]);
            n += p.n();
            data.extend_from_slice(&p.data);
        }
        Self::from_vec([n, c, h, w], data)
    }

    pub fn select(&self, i: usize) -> Self {
        let [_, c, h, w] = self.shape;
        Self::from_vec([1, c, h, w], self.sample(i).to_vec())
    }

    pub fn mean_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .sum();
        s / self.data.len().max(1) as f64
    }
}
