//! Neural primitives with hand-written reverse-mode gradients: linear layers,
//! softplus, an LSTM cell, Adam, and a finite-difference gradient checker.

mod adam;
pub(crate) mod fastmath;
mod gradcheck;
mod linear;
mod lstm;
mod matrix;
mod param;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, GradCheckReport};
pub use linear::{sigmoid, Linear, Softplus};
pub use lstm::{LstmCache, LstmCell, LstmGrads};
pub use matrix::Matrix;
pub use param::{ParamBlock, Parameterized};
