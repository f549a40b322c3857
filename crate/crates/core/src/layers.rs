//! Conv and linear layers: thin parameter bundles over the tape ops.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        let fan_in = c_in * k * k;
        ConvLayer {
            weight: Tensor::kaiming(&[c_out, c_in, k, k], fan_in, rng).with_grad(),
            bias: Tensor::zeros(&[c_out]).with_grad(),
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let w = tape.param(&format!("{name}.w"), &self.weight)?;
        let b = tape.param(&format!("{name}.b"), &self.bias)?;
        tape.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn params(&self, name: &str) -> Vec<(String, &Tensor)> {
        vec![(format!("{name}.w"), &self.weight), (format!("{name}.b"), &self.bias)]
    }

    pub fn params_mut(&mut self, name: &str) -> Vec<(String, &mut Tensor)> {
        vec![(format!("{name}.w"), &mut self.weight), (format!("{name}.b"), &mut self.bias)]
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn new(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        LinearLayer {
            weight: Tensor::kaiming(&[d_in, d_out], d_in, rng).with_grad(),
            bias: Tensor::zeros(&[d_out]).with_grad(),
        }
    }

    /// All-zero layer; used for decoder output layers so training starts
    /// from the zero reconstruction.
    pub fn zeroed(d_in: usize, d_out: usize) -> Self {
        LinearLayer {
            weight: Tensor::zeros(&[d_in, d_out]).with_grad(),
            bias: Tensor::zeros(&[d_out]).with_grad(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let w = tape.param(&format!("{name}.w"), &self.weight)?;
        let b = tape.param(&format!("{name}.b"), &self.bias)?;
        tape.linear(x, w, b)
    }

    pub fn params(&self, name: &str) -> Vec<(String, &Tensor)> {
        vec![(format!("{name}.w"), &self.weight), (format!("{name}.b"), &self.bias)]
    }

    pub fn params_mut(&mut self, name: &str) -> Vec<(String, &mut Tensor)> {
        vec![(format!("{name}.w"), &mut self.weight), (format!("{name}.b"), &mut self.bias)]
    }
}

/// Write tape gradients back into the matching parameter tensors.
/// Names missing from `grads` (parameters not touched by the loss) are left
/// without gradient, which the optimizer rejects; pass `fill_missing` to
/// zero-fill instead.
pub fn assign_grads(
    grads: &[(String, Vec<f64>)],
    params: Vec<(String, &mut Tensor)>,
) -> Result<()> {
    for (name, tensor) in params {
        if let Some((_, g)) = grads.iter().find(|(n, _)| *n == name) {
            match &mut tensor.grad {
                Some(existing) => {
                    for (e, v) in existing.iter_mut().zip(g.iter()) {
                        *e += v;
                    }
                }
                None => tensor.grad = Some(g.clone()),
            }
        }
    }
    Ok(())
}
