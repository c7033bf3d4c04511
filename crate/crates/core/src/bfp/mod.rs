//! Block floating point encoding.
//!
//! A block of `block_size` values shares one power-of-two exponent `e`; each
//! element stores a sign and `m` magnitude bits. Elements decode as
//! `sign * |mantissa| * 2^(e - m)`, i.e. `2^e * 0.mantissa`, so every decoded
//! magnitude is strictly below `2^e`. HBFPn names a configuration with `n`
//! total bits per element (one sign bit plus `n - 1` magnitude bits).

mod block;
mod tensor;

pub use block::{
    dequantize_block, quantize_block, shared_exponent, BfpBlock, ZERO_BLOCK_EXPONENT,
};
pub use tensor::{dequantize_tensor, fake_quantize, quantize_tensor, BfpTensor, Blocking};

pub(crate) use block::{pow2, quantize_into};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a scaled value is mapped to an integer mantissa.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Round to nearest, ties to even.
    #[default]
    NearestEven,
    /// Round toward zero.
    Truncate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantConfig {
    /// Total bits per element including the sign bit.
    pub mantissa_bits: u8,
    /// Number of elements sharing one exponent.
    pub block_size: usize,
    #[serde(default = "default_exponent_bits")]
    pub exponent_bits: u8,
    #[serde(default)]
    pub rounding: Rounding,
}

fn default_exponent_bits() -> u8 {
    8
}

impl QuantConfig {
    /// HBFP configuration with an 8-bit shared exponent.
    pub fn hbfp(mantissa_bits: u8, block_size: usize) -> Result<Self> {
        let cfg = Self {
            mantissa_bits,
            block_size,
            exponent_bits: 8,
            rounding: Rounding::NearestEven,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        // Mantissas are stored as i8, so at most 7 magnitude bits.
        if !(2..=8).contains(&self.mantissa_bits) {
            return Err(Error::InvalidConfig(format!(
                "mantissa_bits must be in 2..=8, got {}",
                self.mantissa_bits
            )));
        }
        if self.block_size == 0 {
            return Err(Error::InvalidConfig("block_size must be positive".into()));
        }
        if !(2..=8).contains(&self.exponent_bits) {
            return Err(Error::InvalidConfig(format!(
                "exponent_bits must be in 2..=8, got {}",
                self.exponent_bits
            )));
        }
        Ok(())
    }

    /// Magnitude bits `m` (sign excluded).
    pub fn magnitude_bits(&self) -> u8 {
        self.mantissa_bits - 1
    }

    pub fn max_magnitude(&self) -> i32 {
        (1 << self.magnitude_bits()) - 1
    }

    /// Inclusive range of representable shared exponents.
    pub fn exponent_range(&self) -> (i32, i32) {
        exponent_range(self.exponent_bits)
    }

    /// Short label such as `hbfp4@64`.
    pub fn label(&self) -> String {
        format!("hbfp{}@{}", self.mantissa_bits, self.block_size)
    }
}

impl fmt::Display for QuantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub(crate) fn exponent_range(exponent_bits: u8) -> (i32, i32) {
    let half = 1i32 << (exponent_bits - 1);
    (-(half - 1), half)
}
