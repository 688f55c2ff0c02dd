//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! Storage precision is generic (`f32` for training, `f64` for high-precision
//! oracle runs); every reduction and every gradient accumulates in 64-bit
//! regardless of storage. The [`tape::Tape`] records operations for reverse
//! accumulation, and [`fd::finite_diff_check`] provides the central-difference
//! oracle used to verify each operation's gradient.

pub mod fd;
pub mod kernels;
pub mod ops;
pub mod tape;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage scalar. All arithmetic happens in `f64`; implementors only convert.
pub trait Element:
    Copy
    + Default
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    const LABEL: &'static str;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    const LABEL: &'static str = "f32";
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const LABEL: &'static str = "f64";
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense multi-dimensional array in row-major order.
///
/// `grad`, when present, always has the same shape as `data`; it is populated
/// by writing back the 64-bit gradients produced by [`tape::Tape::backward`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Tensor<T: Element> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape { shape, len: data.len() });
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn from_f64_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let data = data.into_iter().map(T::from_f64).collect();
        Self::from_vec(shape, data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![T::default(); numel], requires_grad: false, grad: None }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::from_f64(value); numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![T::from_f64(value)], requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Write back a 64-bit gradient buffer (same length as `data`).
    pub fn set_grad_f64(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::InvalidShape { shape: self.shape.clone(), len: grad.len() });
        }
        self.grad = Some(grad.iter().map(|&g| T::from_f64(g)).collect());
        Ok(())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    pub fn map_precision<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    /// Flat index of a multi-dimensional coordinate.
    pub fn flat_index(&self, coord: &[usize]) -> usize {
        debug_assert_eq!(coord.len(), self.shape.len());
        let mut idx = 0;
        for (c, s) in coord.iter().zip(&self.shape) {
            idx = idx * s + c;
        }
        idx
    }

    pub fn at(&self, coord: &[usize]) -> f64 {
        self.data[self.flat_index(coord)].to_f64()
    }
}

/// Product of dimension sizes.
pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}
