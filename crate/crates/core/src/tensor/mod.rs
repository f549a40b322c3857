//! Dense f64 tensor core with reverse-mode gradients.
//!
//! [`Tensor`] is the plain value type: shape + row-major data + an optional
//! gradient buffer. Differentiable computation happens on a [`Tape`]: ops are
//! recorded during the forward pass and replayed in reverse by
//! [`Tape::backward`]. Everything is double precision and single-threaded;
//! identical seeds give bit-identical trajectories.

mod kernels;
mod sgd;
mod tape;

pub use kernels::avg_pool_to_max;
pub use sgd::{poly_lr, SgdConfig, SgdOptimizer};
pub use tape::{Tape, Var, Warnings, EPS_NORM};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense n-dimensional array of f64, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Config(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Uniform init in [-bound, bound].
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.range_f64(-bound, bound)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Kaiming-style init for conv/linear weights: U(-b, b) with
    /// b = sqrt(6 / fan_in).
    pub fn kaiming(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Self {
        Tensor::uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Reinterpret with a new shape of equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// FNV-1a over the exact bit patterns; used for freeze contracts and
    /// regression locks.
    pub fn bit_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &x in &self.data {
            h ^= x.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Checksum over a list of named tensors, order-sensitive.
pub fn params_checksum<'a>(params: impl Iterator<Item = (&'a str, &'a Tensor)>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (name, t) in params {
        for b in name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= t.bit_checksum();
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
