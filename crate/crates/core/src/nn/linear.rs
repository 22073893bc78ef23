use rand::Rng;

use super::fastmath;
use super::matrix::{gemm, Matrix, View};
use super::param::{ParamBlock, Parameterized};
use crate::error::Result;

/// Fully connected layer `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamBlock,
    pub bias: ParamBlock,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            weight: ParamBlock::uniform(
                format!("{name}.weight"),
                vec![fan_out, fan_in],
                bound,
                rng,
            ),
            bias: ParamBlock::uniform(format!("{name}.bias"), vec![fan_out], bound, rng),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape[0]
    }

    fn weight_view(&self) -> View<'_> {
        View::dense(&self.weight.values, self.fan_out(), self.fan_in())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        x.check_shape("linear forward", x.rows(), self.fan_in())?;
        let mut y = Matrix::zeros(x.rows(), self.fan_out());
        for r in 0..x.rows() {
            y.row_mut(r).copy_from_slice(&self.bias.values);
        }
        gemm(
            1.0,
            View::of(x),
            self.weight_view().t(),
            1.0,
            y.as_mut_slice(),
        );
        Ok(y)
    }

    /// Input gradient only; parameter gradients are left untouched.
    pub fn input_grad(&self, dy: &Matrix) -> Result<Matrix> {
        dy.check_shape("linear backward", dy.rows(), self.fan_out())?;
        let mut dx = Matrix::zeros(dy.rows(), self.fan_in());
        gemm(
            1.0,
            View::of(dy),
            self.weight_view(),
            0.0,
            dx.as_mut_slice(),
        );
        Ok(dx)
    }

    /// Returns `dL/dx` and accumulates `dL/dW`, `dL/db`.
    pub fn backward(&mut self, x: &Matrix, dy: &Matrix) -> Result<Matrix> {
        x.check_shape("linear backward input", dy.rows(), self.fan_in())?;
        let dx = self.input_grad(dy)?;
        gemm(
            1.0,
            View::of(dy).t(),
            View::of(x),
            1.0,
            &mut self.weight.grads,
        );
        for (g, s) in self.bias.grads.iter_mut().zip(dy.column_sums()) {
            *g += s;
        }
        Ok(dx)
    }
}

impl Parameterized for Linear {
    fn param_blocks(&self) -> Vec<&ParamBlock> {
        vec![&self.weight, &self.bias]
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// `softplus(x) = ln(1 + exp(beta x)) / beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Softplus {
    pub beta: f64,
}

impl Softplus {
    pub fn value(self, x: f64) -> f64 {
        let mut v = [x];
        fastmath::softplus_slice(&mut v, self.beta);
        v[0]
    }

    /// Derivative with respect to the pre-activation.
    pub fn derivative(self, x: f64) -> f64 {
        sigmoid(self.beta * x)
    }

    pub fn apply(self, pre: &Matrix) -> Matrix {
        let mut out = pre.clone();
        fastmath::softplus_slice(out.as_mut_slice(), self.beta);
        out
    }

    /// `dL/dpre` from `dL/dy` and the cached pre-activation.
    pub fn backward(self, pre: &Matrix, dy: &Matrix) -> Matrix {
        let mut out = pre.clone();
        fastmath::sigmoid_scaled_slice(out.as_mut_slice(), self.beta);
        for (d, g) in out.as_mut_slice().iter_mut().zip(dy.as_slice()) {
            *d *= g;
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    fastmath::sigmoid(x)
}
