//! Block floating point (HBFP) numerics lab.

pub mod analysis;
pub mod bfp;
pub mod cli;
pub mod density;
pub mod error;
pub mod io;
pub mod kernels;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
