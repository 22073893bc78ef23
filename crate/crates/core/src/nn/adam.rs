use serde::{Deserialize, Serialize};

use super::param::ParamBlock;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter block, in the
/// order the blocks are passed to [`Adam::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, blocks: &[&ParamBlock]) -> Self {
        Adam {
            config,
            step: 0,
            first_moment: blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
            second_moment: blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, blocks: &mut [&mut ParamBlock]) -> Result<()> {
        if blocks.len() != self.first_moment.len() {
            return Err(Error::mismatch(
                "adam parameter blocks",
                self.first_moment.len(),
                blocks.len(),
            ));
        }
        for (b, m) in blocks.iter().zip(&self.first_moment) {
            if b.len() != m.len() {
                return Err(Error::mismatch("adam moment size", m.len(), b.len()));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((block, m), v) in blocks
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..block.len() {
                let g = block.grads[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                block.values[i] -= update;
            }
            block.zero_grad();
        }
        Ok(())
    }
}
