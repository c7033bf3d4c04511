//! Independent reference implementations used by the integration tests.
//! Each one is written from the definition, not from the library code.

#![allow(dead_code)]

use hbfp::train::{Activation, MlpModel};

/// Minimum over all n! matchings of the mean absolute difference.
pub fn wasserstein_oracle(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    assert!(p.len() <= 8, "oracle is exponential");
    let n = p.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |sigma| {
        let cost: f64 = (0..n).map(|i| (p[i] - q[sigma[i]]).abs()).sum::<f64>() / n as f64;
        best = best.min(cost);
    });
    best
}

fn permute(v: &mut [usize], k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}

/// Nearest representable value by exhaustive search over all codes for a
/// block with shared exponent `e` and `m` magnitude bits; ties go to the even
/// code.
pub fn nearest_code(x: f64, e: i32, m: u32) -> i64 {
    let step = 2f64.powi(e - m as i32);
    let max = (1i64 << m) - 1;
    let mut best = 0i64;
    let mut best_err = f64::INFINITY;
    for c in -max..=max {
        let err = (x - c as f64 * step).abs();
        if err < best_err || (err == best_err && c % 2 == 0) {
            best = c;
            best_err = err;
        }
    }
    best
}

/// Shared exponent by definition: the smallest e with max|v| < 2^e,
/// clamped to the 8-bit range; `None` for an all-zero block.
pub fn shared_exponent(block: &[f32]) -> Option<i32> {
    let max = block.iter().fold(0f64, |m, &v| m.max(f64::from(v).abs()));
    if max == 0.0 {
        return None;
    }
    let (mut e, mut p) = (-127, 2f64.powi(-127));
    while e < 128 && p <= max {
        e += 1;
        p *= 2.0;
    }
    Some(e)
}

/// FP32 product of already-quantized operands: `a` is `[m × k]` and `b` is
/// `[k × n]`. Each `block`-long slice of the reduction is summed exactly
/// (every partial product shares one power-of-two scale) and rounded once
/// to FP32; the block results are then added in FP32 from left to right.
pub fn blocked_product(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, block: usize) -> Vec<f32> {
    let mut out = vec![0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0f32;
            for lo in (0..k).step_by(block) {
                let part: f64 = (lo..(lo + block).min(k))
                    .map(|p| f64::from(a[i * k + p]) * f64::from(b[p * n + j]))
                    .sum();
                acc += part as f32;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Mean softmax cross-entropy of an MLP evaluated entirely in f64, with
/// parameters taken from `params` (layout of `MlpModel::params`). Also
/// returns every pre-activation sign so callers can detect ReLU kinks.
pub fn mlp_loss_f64(
    model: &MlpModel,
    params: &[Vec<f64>],
    x: &[f32],
    labels: &[usize],
) -> (f64, Vec<bool>) {
    let batch = labels.len();
    let mut h: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
    let mut width = x.len() / batch;
    let mut signs = Vec::new();
    for (li, layer) in model.layers().iter().enumerate() {
        let (w, b) = (&params[2 * li], &params[2 * li + 1]);
        let out = b.len();
        let mut z = vec![0f64; batch * out];
        for r in 0..batch {
            for o in 0..out {
                let s: f64 = (0..width).map(|k| h[r * width + k] * w[o * width + k]).sum();
                z[r * out + o] = s + b[o];
            }
        }
        if layer.activation == Activation::Relu {
            signs.extend(z.iter().map(|&v| v > 0.0));
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = z;
        width = out;
    }
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &h[r * width..(r + 1) * width];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += lse - row[y];
    }
    (loss / batch as f64, signs)
}
