use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::bfp::{BfpBlock, QuantConfig};
use crate::error::Result;
use crate::kernels::{bfp_dot, bfp_matmul, emulated_dot_6on4, reference_matmul};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub cases: u64,
    pub mismatches: u64,
    pub passed: bool,
}

impl CheckReport {
    fn new(check: &str, cases: u64, mismatches: u64) -> Self {
        Self {
            check: check.into(),
            cases,
            mismatches,
            passed: mismatches == 0,
        }
    }
}

/// Random tensor whose rows mix magnitudes across several binades, with
/// occasional exact zeros.
pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let scale = 2f32.powi(rng.random_range(-6..=6));
    Tensor::from_fn(vec![rows, cols], |_| {
        if rng.random_bool(0.05) {
            0.0
        } else {
            let z: f32 = StandardNormal.sample(rng);
            z * scale * 2f32.powi(rng.random_range(-3..=3))
        }
    })
}

/// `bfp_matmul` against FP32 matmul of fake-quantized operands, compared
/// bit for bit.
pub fn matmul_check(cases: u64, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..cases {
        let (m, k, n) = (
            rng.random_range(1..=24),
            rng.random_range(1..=160),
            rng.random_range(1..=24),
        );
        let cfg = QuantConfig::hbfp(rng.random_range(2..=8), rng.random_range(1..=80))?;
        let a = random_tensor(&mut rng, m, k);
        let b = random_tensor(&mut rng, k, n);
        let got = bfp_matmul(&a, &b, &cfg)?;
        let want = reference_matmul(&a, &b, &cfg)?;
        let same = got
            .data()
            .iter()
            .zip(want.data())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        if !same || got.shape() != want.shape() {
            mismatches += 1;
        }
    }
    Ok(CheckReport::new("matmul", cases, mismatches))
}

fn single(m: i8) -> BfpBlock {
    BfpBlock::new(0, 5, vec![m]).expect("in range")
}

/// 6-on-4 emulation against the direct HBFP6 dot product: every signed
/// single-element pair, then `random` random 64-element block pairs.
pub fn emulate_check(random: u64, seed: u64) -> Result<CheckReport> {
    let mut cases = 0;
    let mut mismatches = 0;
    for a in -31i8..=31 {
        for b in -31i8..=31 {
            let (x, y) = (single(a), single(b));
            cases += 1;
            if emulated_dot_6on4(&x, &y)? != bfp_dot(&x, &y)? {
                mismatches += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = |rng: &mut ChaCha8Rng| {
        let mant = (0..64).map(|_| rng.random_range(-31i8..=31)).collect();
        BfpBlock::new(rng.random_range(-127..=128), 5, mant)
    };
    for _ in 0..random {
        let (x, y) = (block(&mut rng)?, block(&mut rng)?);
        cases += 1;
        if emulated_dot_6on4(&x, &y)? != bfp_dot(&x, &y)? {
            mismatches += 1;
        }
    }
    Ok(CheckReport::new("emulate_6on4", cases, mismatches))
}
