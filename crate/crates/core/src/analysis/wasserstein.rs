use crate::bfp::{fake_quantize, Blocking, QuantConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Equal-mass empirical distribution over the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { samples })
    }

    pub fn from_f32(samples: &[f32]) -> Result<Self> {
        Self::new(samples.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn sorted(&self) -> Vec<f64> {
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        s
    }
}

/// Wasserstein-1 distance between two equal-size empirical distributions.
///
/// In one dimension the optimal coupling for cost `|x - y|` matches the i-th
/// smallest sample of `p` with the i-th smallest of `q`, so the distance is
/// the mean absolute difference of the sorted samples.
pub fn wasserstein_1d(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SizeMismatch(p.len(), q.len()));
    }
    let (a, b) = (p.sorted(), q.sorted());
    let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / a.len() as f64)
}

/// Distance between a tensor's values and its fake-quantized values.
pub fn quantization_distance(x: &Tensor, cfg: &QuantConfig, blocking: Blocking) -> Result<f64> {
    let q = fake_quantize(x, cfg, blocking)?;
    wasserstein_1d(
        &EmpiricalDistribution::from_f32(x.data())?,
        &EmpiricalDistribution::from_f32(q.data())?,
    )
}
