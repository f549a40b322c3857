//! Heavy-ball SGD with weight decay folded into the gradient:
//! v <- momentum·v + grad + wd·param, param <- param - lr·v.
//! The polynomial learning-rate decay is applied by the caller via
//! [`poly_lr`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Exponent of the polynomial decay lr(t) = lr·(1 - t/T)^power.
    pub poly_power: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr: 1e-4, momentum: 0.9, weight_decay: 5e-4, poly_power: 0.9 }
    }
}

/// lr(t) = lr0·(1 - t/total)^power, clamped at 0.
pub fn poly_lr(lr0: f64, step: usize, total: usize, power: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = 1.0 - (step as f64 / total as f64).min(1.0);
    lr0 * frac.powf(power)
}

pub struct SgdOptimizer {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<String, Vec<f64>>,
}

impl SgdOptimizer {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        SgdOptimizer { momentum, weight_decay, velocity: HashMap::new() }
    }

    /// Apply one update to each (name, tensor). Every tensor must carry a
    /// populated gradient; the gradient is consumed.
    pub fn step<'a, N: AsRef<str>>(
        &mut self,
        lr: f64,
        params: impl Iterator<Item = (N, &'a mut Tensor)>,
    ) -> Result<()> {
        for (name, t) in params {
            let name = name.as_ref();
            let grad = t
                .grad
                .take()
                .ok_or_else(|| Error::Invariant(format!("missing gradient for parameter {name}")))?;
            if grad.len() != t.numel() {
                return Err(Error::Invariant(format!(
                    "gradient size {} does not match parameter {name} ({})",
                    grad.len(),
                    t.numel()
                )));
            }
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let m = self.momentum;
            let wd = self.weight_decay;
            let data = t.data_mut();
            for i in 0..grad.len() {
                v[i] = m * v[i] + grad[i] + wd * data[i];
                data[i] -= lr * v[i];
            }
        }
        Ok(())
    }
}
