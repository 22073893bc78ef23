//! Deep implicit templates: a signed-distance template network composed with a
//! per-shape recurrent spatial warp, trained as an auto-decoder.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod inference;
pub mod losses;
pub mod model;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
