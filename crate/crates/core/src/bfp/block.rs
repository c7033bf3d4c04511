use crate::error::{Error, Result};

use super::{exponent_range, QuantConfig, Rounding};

/// Exponent stored for an all-zero block.
pub const ZERO_BLOCK_EXPONENT: i32 = i16::MIN as i32;

/// One block of sign-magnitude mantissas sharing an exponent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BfpBlock {
    shared_exponent: i32,
    magnitude_bits: u8,
    mantissas: Vec<i8>,
}

impl BfpBlock {
    /// Validates the block invariants: magnitudes fit in `magnitude_bits`, and
    /// the zero sentinel carries only zero mantissas.
    pub fn new(shared_exponent: i32, magnitude_bits: u8, mantissas: Vec<i8>) -> Result<Self> {
        if !(1..=7).contains(&magnitude_bits) {
            return Err(Error::InvalidConfig(format!(
                "magnitude bits must be in 1..=7, got {magnitude_bits}"
            )));
        }
        if mantissas.is_empty() {
            return Err(Error::Empty);
        }
        let max = (1i32 << magnitude_bits) - 1;
        if let Some(i) = mantissas.iter().position(|&q| i32::from(q).abs() > max) {
            return Err(Error::BlockMismatch(format!(
                "mantissa {} at index {i} exceeds {max}",
                mantissas[i]
            )));
        }
        if shared_exponent == ZERO_BLOCK_EXPONENT {
            if mantissas.iter().any(|&q| q != 0) {
                return Err(Error::BlockMismatch(
                    "zero-sentinel block with nonzero mantissas".into(),
                ));
            }
        } else if !(-200..=200).contains(&shared_exponent) {
            return Err(Error::BlockMismatch(format!(
                "shared exponent {shared_exponent} out of range"
            )));
        }
        Ok(Self {
            shared_exponent,
            magnitude_bits,
            mantissas,
        })
    }

    pub(crate) fn from_parts(shared_exponent: i32, magnitude_bits: u8, mantissas: Vec<i8>) -> Self {
        Self {
            shared_exponent,
            magnitude_bits,
            mantissas,
        }
    }

    pub fn shared_exponent(&self) -> i32 {
        self.shared_exponent
    }

    pub fn magnitude_bits(&self) -> u8 {
        self.magnitude_bits
    }

    pub fn mantissas(&self) -> &[i8] {
        &self.mantissas
    }

    pub fn len(&self) -> usize {
        self.mantissas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mantissas.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.shared_exponent == ZERO_BLOCK_EXPONENT
    }

    /// Gap between adjacent representable values, `2^(e - m)`; zero for the
    /// sentinel block.
    pub fn step(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            pow2(self.shared_exponent - i32::from(self.magnitude_bits))
        }
    }
}

/// Exact `2^k` as f64 for `k` in the normal f64 range.
pub(crate) fn pow2(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}

/// `floor(log2 |v|)` for a nonzero finite f32, read from the exponent field of
/// its (always normal) f64 widening.
fn floor_log2(v: f32) -> i32 {
    let bits = f64::from(v).abs().to_bits();
    ((bits >> 52) & 0x7ff) as i32 - 1023
}

/// Shared exponent of a block: the smallest `e` with `max|v| < 2^e`, clamped
/// to the range of an `exponent_bits`-wide exponent. Returns
/// [`ZERO_BLOCK_EXPONENT`] when every value is zero.
pub fn shared_exponent(values: &[f32], exponent_bits: u8) -> Result<i32> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(shared_exponent_unchecked(values, exponent_bits))
}

fn shared_exponent_unchecked(values: &[f32], exponent_bits: u8) -> i32 {
    let max = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return ZERO_BLOCK_EXPONENT;
    }
    let (lo, hi) = exponent_range(exponent_bits);
    (floor_log2(max) + 1).clamp(lo, hi)
}

const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

/// Quantizes `values` (finite, at most `out.len()` long) into `out`, zero
/// filling the tail. Returns the shared exponent.
pub(crate) fn quantize_into(values: &[f32], cfg: &QuantConfig, out: &mut [i8]) -> i32 {
    debug_assert!(values.len() <= out.len());
    let e = shared_exponent_unchecked(values, cfg.exponent_bits);
    if e == ZERO_BLOCK_EXPONENT {
        out.fill(0);
        return e;
    }
    let m = i32::from(cfg.magnitude_bits());
    let max = f64::from(cfg.max_magnitude());
    let inv_step = pow2(m - e);
    for (q, &v) in out.iter_mut().zip(values) {
        // Clamping first is equivalent because `max` is an integer. Adding and
        // subtracting 1.5·2^52 rounds ties to even exactly for |s| < 2^51 and,
        // unlike `round_ties_even`, never becomes a libm call.
        let s = (f64::from(v) * inv_step).clamp(-max, max);
        *q = match cfg.rounding {
            Rounding::NearestEven => ((s + ROUND_MAGIC) - ROUND_MAGIC) as i8,
            Rounding::Truncate => s as i8,
        };
    }
    out[values.len()..].fill(0);
    e
}

/// Quantizes exactly one block of `cfg.block_size` values.
pub fn quantize_block(values: &[f32], cfg: &QuantConfig) -> Result<BfpBlock> {
    cfg.validate()?;
    if values.len() != cfg.block_size {
        return Err(Error::SizeMismatch(values.len(), cfg.block_size));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut mantissas = vec![0i8; values.len()];
    let e = quantize_into(values, cfg, &mut mantissas);
    Ok(BfpBlock::from_parts(e, cfg.magnitude_bits(), mantissas))
}

pub fn dequantize_block(block: &BfpBlock) -> Vec<f32> {
    let step = block.step();
    block
        .mantissas
        .iter()
        .map(|&q| (f64::from(q) * step) as f32)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(mantissa_bits: u8, block: usize) -> QuantConfig {
        QuantConfig::hbfp(mantissa_bits, block).unwrap()
    }

    /// Nearest representable code by exhaustive search over all
    /// sign-magnitude mantissas, ties to the even code.
    fn nearest_code(v: f64, e: i32, m: u8) -> i32 {
        let step = 2f64.powi(e - i32::from(m));
        let max = (1i32 << m) - 1;
        let mut best = 0;
        let mut best_err = f64::INFINITY;
        for k in -max..=max {
            let err = (v - f64::from(k) * step).abs();
            if err < best_err || (err == best_err && k % 2 == 0) {
                best = k;
                best_err = err;
            }
        }
        best
    }

    #[test]
    fn shared_exponent_examples() {
        assert_eq!(shared_exponent(&[1.0, 0.5, -0.25], 8).unwrap(), 1);
        assert_eq!(shared_exponent(&[0.0, 0.0], 8).unwrap(), ZERO_BLOCK_EXPONENT);
        // floor(log2 0.3) = -2 by direct evaluation
        assert_eq!(0.3f64.log2().floor(), -2.0);
        assert_eq!(shared_exponent(&[0.3], 8).unwrap(), -1);
    }

    #[test]
    fn shared_exponent_errors() {
        assert!(matches!(
            shared_exponent(&[1.0, f32::NAN], 8),
            Err(Error::NonFinite(1))
        ));
        assert!(matches!(shared_exponent(&[], 8), Err(Error::Empty)));
    }

    #[test]
    fn shared_exponent_clamps() {
        assert_eq!(shared_exponent(&[f32::MAX], 8).unwrap(), 128);
        assert_eq!(shared_exponent(&[1e-40], 8).unwrap(), -127);
        assert_eq!(shared_exponent(&[1000.0], 4).unwrap(), 8);
    }

    #[test]
    fn quantize_exact_powers_of_two() {
        let b = quantize_block(&[1.0, 0.5, -0.25, 0.0], &cfg(4, 4)).unwrap();
        assert_eq!(b.shared_exponent(), 1);
        assert_eq!(b.mantissas(), &[4, 2, -1, 0]);
        assert_eq!(dequantize_block(&b), vec![1.0, 0.5, -0.25, 0.0]);
    }

    #[test]
    fn quantize_point_three() {
        let b = quantize_block(&[0.3, 0.0, 0.0, 0.0], &cfg(4, 4)).unwrap();
        assert_eq!(b.shared_exponent(), -1);
        assert_eq!(nearest_code(f64::from(0.3f32), -1, 3), 5);
        assert_eq!(b.mantissas(), &[5, 0, 0, 0]);
        assert_eq!(dequantize_block(&b), vec![0.3125, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn quantize_saturates_instead_of_reaching_two_to_m() {
        let v = 0.999999f32;
        let b = quantize_block(&[v, 0.0, 0.0, 0.0], &cfg(4, 4)).unwrap();
        assert_eq!(b.shared_exponent(), 0);
        // rounding alone would give 8 = 2^m
        assert_eq!((f64::from(v) * 8.0).round_ties_even(), 8.0);
        assert_eq!(nearest_code(f64::from(v), 0, 3), 7);
        assert_eq!(b.mantissas()[0], 7);
        assert_eq!(dequantize_block(&b)[0], 0.875);
    }

    #[test]
    fn zero_block_uses_sentinel() {
        let b = quantize_block(&[0.0; 8], &cfg(6, 8)).unwrap();
        assert!(b.is_zero());
        assert_eq!(b.shared_exponent(), ZERO_BLOCK_EXPONENT);
        assert_eq!(dequantize_block(&b), vec![0.0; 8]);
    }

    #[test]
    fn dequantize_examples() {
        let b = BfpBlock::new(-1, 3, vec![5, 0, 0, 0]).unwrap();
        assert_eq!(dequantize_block(&b), vec![0.3125, 0.0, 0.0, 0.0]);
        let b = BfpBlock::new(1, 3, vec![4, 2, -1, 0]).unwrap();
        assert_eq!(dequantize_block(&b), vec![1.0, 0.5, -0.25, 0.0]);
    }

    #[test]
    fn block_validation() {
        assert!(BfpBlock::new(0, 3, vec![8]).is_err());
        assert!(BfpBlock::new(0, 3, vec![-8]).is_err());
        assert!(BfpBlock::new(ZERO_BLOCK_EXPONENT, 3, vec![1]).is_err());
        assert!(BfpBlock::new(0, 3, vec![]).is_err());
        assert!(BfpBlock::new(0, 3, vec![7, -7]).is_ok());
    }

    #[test]
    fn quantize_block_errors() {
        assert!(matches!(
            quantize_block(&[1.0; 3], &cfg(4, 4)),
            Err(Error::SizeMismatch(3, 4))
        ));
        assert!(quantize_block(&[1.0, f32::INFINITY], &cfg(4, 2)).is_err());
    }

    #[test]
    fn truncation_rounds_toward_zero() {
        let c = cfg(4, 2).with_rounding(Rounding::Truncate);
        let b = quantize_block(&[0.999, -0.3], &c).unwrap();
        // e = 0, step 1/8: 7.992 -> 7, -2.4 -> -2
        assert_eq!(b.mantissas(), &[7, -2]);
    }

    fn block_values() -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-1.0e3f32..1.0e3, 1..80)
    }

    proptest! {
        #[test]
        fn matches_nearest_code_oracle(values in block_values(), mb in 2u8..=8) {
            let c = cfg(mb, values.len());
            let b = quantize_block(&values, &c).unwrap();
            if !b.is_zero() {
                for (&v, &q) in values.iter().zip(b.mantissas()) {
                    let want = nearest_code(f64::from(v), b.shared_exponent(), c.magnitude_bits());
                    prop_assert_eq!(i32::from(q), want);
                }
            }
        }

        #[test]
        fn decoded_below_two_to_e(values in block_values(), mb in 2u8..=8) {
            let b = quantize_block(&values, &cfg(mb, values.len())).unwrap();
            if !b.is_zero() {
                let bound = 2f64.powi(b.shared_exponent());
                for d in dequantize_block(&b) {
                    prop_assert!(f64::from(d).abs() < bound);
                }
            }
        }

        #[test]
        fn sign_symmetry(values in block_values(), mb in 2u8..=8) {
            let c = cfg(mb, values.len());
            let neg: Vec<f32> = values.iter().map(|v| -v).collect();
            let a = quantize_block(&values, &c).unwrap();
            let b = quantize_block(&neg, &c).unwrap();
            prop_assert_eq!(a.shared_exponent(), b.shared_exponent());
            for (x, y) in a.mantissas().iter().zip(b.mantissas()) {
                prop_assert_eq!(*x, -*y);
            }
        }

        #[test]
        fn more_mantissa_bits_never_increase_error(values in block_values(), mb in 2u8..=7) {
            let lo = dequantize_block(&quantize_block(&values, &cfg(mb, values.len())).unwrap());
            let hi = dequantize_block(&quantize_block(&values, &cfg(mb + 1, values.len())).unwrap());
            for ((&v, &a), &b) in values.iter().zip(&lo).zip(&hi) {
                let ea = (f64::from(v) - f64::from(a)).abs();
                let eb = (f64::from(v) - f64::from(b)).abs();
                prop_assert!(eb <= ea, "v={} lo={} hi={}", v, a, b);
            }
        }

        #[test]
        fn large_element_never_helps_small_ones(
            values in block_values(),
            big in 1.0e3f32..1.0e6,
            mb in 2u8..=8,
        ) {
            let n = values.len();
            let c = cfg(mb, n);
            let block = quantize_block(&values, &c).unwrap();
            let before = dequantize_block(&block);
            let mut grown = values.clone();
            grown.push(big);
            let after = dequantize_block(&quantize_block(&grown, &cfg(mb, n + 1)).unwrap());
            for i in 0..n {
                // A saturated element can land on 2^e once the exponent grows.
                let unclamped = (f64::from(values[i]) / block.step()).round_ties_even();
                if block.is_zero() || unclamped.abs() > f64::from(c.max_magnitude()) {
                    continue;
                }
                let eb = (f64::from(values[i]) - f64::from(before[i])).abs();
                let ea = (f64::from(values[i]) - f64::from(after[i])).abs();
                prop_assert!(ea >= eb);
            }
        }
    }
}
