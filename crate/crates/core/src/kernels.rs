//! Integer-mantissa dot products and BFP matrix multiplication.
//!
//! A block dot product multiplies mantissas in exact integer arithmetic and
//! adds the two shared exponents, as a systolic-array PE does. Partial results
//! are converted to FP32 once per block and accumulated in FP32 in a fixed
//! left-to-right block order, so every product is bit-reproducible.

use rayon::prelude::*;

use crate::bfp::{
    fake_quantize, pow2, quantize_into, BfpBlock, Blocking, QuantConfig, ZERO_BLOCK_EXPONENT,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Result of one block dot product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DotResult {
    /// `integer_dot * 2^(exponent_sum - 2m)`, rounded once to FP32.
    pub value: f32,
    pub integer_dot: i64,
    /// Sum of the two shared exponents, or [`ZERO_BLOCK_EXPONENT`] when either
    /// block is all zero.
    pub exponent_sum: i32,
}

/// Largest possible `|integer_dot|` for a block of `block_size` elements with
/// `magnitude_bits` magnitude bits.
pub fn max_abs_dot(block_size: usize, magnitude_bits: u8) -> u128 {
    let max = (1u128 << magnitude_bits) - 1;
    block_size as u128 * max * max
}

/// True when a block's integer dot product cannot overflow the 64-bit
/// accumulator.
pub fn accumulator_fits(block_size: usize, magnitude_bits: u8) -> bool {
    max_abs_dot(block_size, magnitude_bits) <= i64::MAX as u128
}

fn to_value(integer_dot: i64, exponent_sum: i32, magnitude_bits: u8) -> f32 {
    if integer_dot == 0 {
        return 0.0;
    }
    let scale = exponent_sum - 2 * i32::from(magnitude_bits);
    (integer_dot as f64 * pow2(scale)) as f32
}

fn check_pair(a: &BfpBlock, b: &BfpBlock) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::BlockMismatch(format!(
            "block sizes differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.magnitude_bits() != b.magnitude_bits() {
        return Err(Error::BlockMismatch(format!(
            "magnitude bits differ: {} vs {}",
            a.magnitude_bits(),
            b.magnitude_bits()
        )));
    }
    if !accumulator_fits(a.len(), a.magnitude_bits()) {
        return Err(Error::BlockMismatch(format!(
            "block of {} may overflow the accumulator",
            a.len()
        )));
    }
    Ok(())
}

fn finish(a: &BfpBlock, b: &BfpBlock, integer_dot: i64) -> DotResult {
    if a.is_zero() || b.is_zero() {
        return DotResult {
            value: 0.0,
            integer_dot: 0,
            exponent_sum: ZERO_BLOCK_EXPONENT,
        };
    }
    let exponent_sum = a.shared_exponent() + b.shared_exponent();
    DotResult {
        value: to_value(integer_dot, exponent_sum, a.magnitude_bits()),
        integer_dot,
        exponent_sum,
    }
}

pub fn bfp_dot(a: &BfpBlock, b: &BfpBlock) -> Result<DotResult> {
    check_pair(a, b)?;
    let integer_dot = a
        .mantissas()
        .iter()
        .zip(b.mantissas())
        .map(|(&x, &y)| i64::from(x) * i64::from(y))
        .sum();
    Ok(finish(a, b, integer_dot))
}

/// Splits a 5-bit magnitude into its high bit and low nibble, `a = 16·hi + lo`.
pub fn split_magnitude(a: u8) -> (u8, u8) {
    (a >> 4, a & 0x0f)
}

/// Product of two HBFP6 mantissas built from four 4-bit partial products.
pub fn emulated_product(a: i8, b: i8) -> i32 {
    let (ah, al) = split_magnitude(a.unsigned_abs());
    let (bh, bl) = split_magnitude(b.unsigned_abs());
    let mag = (i32::from(ah * bh) << 8)
        + (i32::from(ah * bl) << 4)
        + (i32::from(al * bh) << 4)
        + i32::from(al * bl);
    if (a < 0) != (b < 0) {
        -mag
    } else {
        mag
    }
}

/// HBFP6 block dot product run as four passes over a 4-bit datapath.
///
/// Each pass multiplies one pair of 4-bit slices (high·high, high·low,
/// low·high, low·low) of every element; the four pass sums are then shifted
/// into place and added. Signs are applied to each partial product outside the
/// 4-bit multiplier.
pub fn emulated_dot_6on4(a: &BfpBlock, b: &BfpBlock) -> Result<DotResult> {
    if a.magnitude_bits() != 5 || b.magnitude_bits() != 5 {
        return Err(Error::BlockMismatch(format!(
            "6-on-4 emulation needs 5 magnitude bits, got {} and {}",
            a.magnitude_bits(),
            b.magnitude_bits()
        )));
    }
    check_pair(a, b)?;
    let mut passes = [0i64; 4];
    for (&x, &y) in a.mantissas().iter().zip(b.mantissas()) {
        let (xh, xl) = split_magnitude(x.unsigned_abs());
        let (yh, yl) = split_magnitude(y.unsigned_abs());
        let sign = if (x < 0) != (y < 0) { -1 } else { 1 };
        for (acc, (p, q)) in passes
            .iter_mut()
            .zip([(xh, yh), (xh, yl), (xl, yh), (xl, yl)])
        {
            debug_assert!(p < 16 && q < 16);
            *acc += sign * i64::from(p * q);
        }
    }
    let integer_dot = (passes[0] << 8) + (passes[1] << 4) + (passes[2] << 4) + passes[3];
    Ok(finish(a, b, integer_dot))
}

/// Multiply-accumulate count of an `m×k` by `k×n` product.
pub fn op_count(m: usize, k: usize, n: usize) -> u64 {
    m as u64 * k as u64 * n as u64
}

/// Rows of a matrix quantized along the last axis, stored flat.
struct PackedRows {
    blocks_per_row: usize,
    block_size: usize,
    exponents: Vec<i32>,
    mantissas: Vec<i8>,
}

impl PackedRows {
    fn new(x: &Tensor, cfg: &QuantConfig) -> Self {
        let (rows, cols) = x.matrix_dims();
        let bs = cfg.block_size;
        let blocks_per_row = cols.div_ceil(bs);
        let mut exponents = Vec::with_capacity(rows * blocks_per_row);
        let mut mantissas = vec![0i8; rows * blocks_per_row * bs];
        for (r, row) in x.data().chunks(cols.max(1)).enumerate().take(rows) {
            for b in 0..blocks_per_row {
                let lo = b * bs;
                let hi = (lo + bs).min(cols);
                let start = (r * blocks_per_row + b) * bs;
                let e = quantize_into(&row[lo..hi], cfg, &mut mantissas[start..start + bs]);
                exponents.push(e);
            }
        }
        Self {
            blocks_per_row,
            block_size: bs,
            exponents,
            mantissas,
        }
    }

    fn block(&self, row: usize, b: usize) -> (i32, &[i8]) {
        let i = row * self.blocks_per_row + b;
        let start = i * self.block_size;
        (
            self.exponents[i],
            &self.mantissas[start..start + self.block_size],
        )
    }
}

fn dot_i32(a: &[i8], b: &[i8]) -> i64 {
    let s: i32 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| i32::from(x) * i32::from(y))
        .sum();
    i64::from(s)
}

fn dot_i64(a: &[i8], b: &[i8]) -> i64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| i64::from(x) * i64::from(y))
        .sum()
}

const PARALLEL_MACS: u64 = 1 << 18;

/// `A · Bᵀ` for `A: m×k` and `Bt: n×k`, both quantized along k.
pub fn bfp_matmul_nt(a: &Tensor, bt: &Tensor, cfg: &QuantConfig) -> Result<Tensor> {
    cfg.validate()?;
    let [m, k] = a.dims2()?;
    let [n, k2] = bt.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "reduction dimensions differ: {m}x{k} by ({n}x{k2})ᵀ"
        )));
    }
    a.check_finite()?;
    bt.check_finite()?;
    let mag = cfg.magnitude_bits();
    if !accumulator_fits(cfg.block_size, mag) {
        return Err(Error::InvalidConfig(format!(
            "block size {} may overflow the accumulator",
            cfg.block_size
        )));
    }
    let pa = PackedRows::new(a, cfg);
    let pb = PackedRows::new(bt, cfg);
    let dot = if max_abs_dot(cfg.block_size, mag) <= i32::MAX as u128 {
        dot_i32
    } else {
        dot_i64
    };
    let nblocks = pa.blocks_per_row;
    let row = |i: usize, out: &mut [f32]| {
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for b in 0..nblocks {
                let (ea, qa) = pa.block(i, b);
                let (eb, qb) = pb.block(j, b);
                if ea == ZERO_BLOCK_EXPONENT || eb == ZERO_BLOCK_EXPONENT {
                    continue;
                }
                acc += to_value(dot(qa, qb), ea + eb, mag);
            }
            *o = acc;
        }
    };
    let mut out = vec![0.0f32; m * n];
    if n > 0 {
        if op_count(m, k, n) >= PARALLEL_MACS {
            out.par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, o)| row(i, o));
        } else {
            out.chunks_mut(n).enumerate().for_each(|(i, o)| row(i, o));
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// BFP product of `A: m×k` and `B: k×n`, both operands blocked along k.
pub fn bfp_matmul(a: &Tensor, b: &Tensor, cfg: &QuantConfig) -> Result<Tensor> {
    let [_, k] = a.dims2()?;
    let [k2, _] = b.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "inner dimensions differ: {:?} by {:?}",
            a.shape(),
            b.shape()
        )));
    }
    bfp_matmul_nt(a, &b.transpose()?, cfg)
}

/// FP32 product summed block by block: each run of `block_size` products is
/// summed left to right, then the block sums are accumulated left to right.
pub fn blocked_fp32_matmul(a: &Tensor, b: &Tensor, block_size: usize) -> Result<Tensor> {
    let [m, k] = a.dims2()?;
    let [k2, n] = b.dims2()?;
    if k != k2 || block_size == 0 {
        return Err(Error::Shape(format!(
            "cannot multiply {:?} by {:?} in blocks of {block_size}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f32;
            for lo in (0..k).step_by(block_size) {
                let mut part = 0.0f32;
                for p in lo..(lo + block_size).min(k) {
                    part += ad[i * k + p] * bd[p * n + j];
                }
                acc += part;
            }
            out[i * n + j] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Fake-quantizes both operands along the reduction axis and multiplies them
/// with [`blocked_fp32_matmul`]; the reference path for [`bfp_matmul`].
pub fn reference_matmul(a: &Tensor, b: &Tensor, cfg: &QuantConfig) -> Result<Tensor> {
    let fa = fake_quantize(a, cfg, Blocking::Rows)?;
    let fb = fake_quantize(b, cfg, Blocking::Columns)?;
    blocked_fp32_matmul(&fa, &fb, cfg.block_size)
}
