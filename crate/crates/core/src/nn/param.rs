use rand::Rng;

use crate::error::{Error, Result};

/// Named parameter tensor with a same-shaped gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl ParamBlock {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        ParamBlock {
            name: name.into(),
            shape,
            values: vec![0.0; n],
            grads: vec![0.0; n],
        }
    }

    pub fn from_values(
        name: impl Into<String>,
        shape: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::mismatch("parameter block", n, values.len()));
        }
        Ok(ParamBlock {
            name: name.into(),
            shape,
            grads: vec![0.0; n],
            values,
        })
    }

    /// Fills values with `U(-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let mut block = Self::zeros(name, shape);
        if bound > 0.0 {
            for v in &mut block.values {
                *v = rng.random_range(-bound..bound);
            }
        }
        block
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Adds `other`'s gradients into this block's accumulator.
    pub fn accumulate_from(&mut self, other: &ParamBlock) {
        debug_assert_eq!(self.grads.len(), other.grads.len());
        for (g, o) in self.grads.iter_mut().zip(&other.grads) {
            *g += o;
        }
    }
}

/// Anything that owns trainable parameter blocks, in a fixed order.
pub trait Parameterized {
    fn param_blocks(&self) -> Vec<&ParamBlock>;
    fn param_blocks_mut(&mut self) -> Vec<&mut ParamBlock>;

    fn zero_grads(&mut self) {
        for b in self.param_blocks_mut() {
            b.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }
}

impl Parameterized for ParamBlock {
    fn param_blocks(&self) -> Vec<&ParamBlock> {
        vec![self]
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        vec![self]
    }
}

impl Parameterized for Vec<ParamBlock> {
    fn param_blocks(&self) -> Vec<&ParamBlock> {
        self.iter().collect()
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        self.iter_mut().collect()
    }
}
