use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::ParamKind;
use crate::bfp::QuantConfig;
use crate::error::{Error, Result};
use crate::kernels::bfp_matmul_nt;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    First,
    Middle,
    Last,
}

/// Dense layer computing `act(x · Wᵀ + b)` with `W` stored as `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }
}

/// Per-layer numerics; `None` runs the GEMMs in plain FP32.
pub type LayerNumerics = Option<QuantConfig>;

/// Multilayer perceptron whose last layer feeds softmax cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

/// Activations saved by [`MlpModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Tensor>,
    pre_activations: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

/// `x · wᵀ` for `x: [b × in]`, `w: [out × in]`.
pub(crate) fn linear(x: &Tensor, w: &Tensor, cfg: &LayerNumerics) -> Result<Tensor> {
    match cfg {
        Some(c) => bfp_matmul_nt(x, w, c),
        None => x.matmul(&w.transpose()?),
    }
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::InvalidConfig("model needs at least one layer".into()));
        };
        if last.activation != Activation::None {
            return Err(Error::InvalidConfig(
                "last layer must be linear (it feeds softmax)".into(),
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            let [out, _] = l.weights.dims2()?;
            if l.bias.shape() != [out] {
                return Err(Error::Shape(format!(
                    "layer {i}: bias shape {:?} for {out} outputs",
                    l.bias.shape()
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// He-normal weights, zero biases, ReLU on every layer but the last.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad layer dims {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let (fan_in, out) = (d[0], d[1]);
                let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt())
                    .expect("positive std");
                Layer {
                    weights: Tensor::from_fn(vec![out, fan_in], |_| normal.sample(rng)),
                    bias: Tensor::zeros(vec![out]),
                    activation: if i + 1 == n {
                        Activation::None
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// A single-layer model counts as `Last`.
    pub fn role(&self, index: usize) -> LayerRole {
        role_of(index, self.layers.len())
    }

    /// Parameters in `[w0, b0, w1, b1, ...]` order.
    pub fn params(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.clone(), l.bias.clone()])
            .collect()
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        self.layers
            .iter()
            .flat_map(|_| [ParamKind::Filters, ParamKind::Fixed])
            .collect()
    }

    /// Same architecture with parameters taken from `params` (as produced by
    /// [`MlpModel::params`]).
    pub fn with_params(&self, params: &[Tensor]) -> Result<Self> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::SizeMismatch(params.len(), 2 * self.layers.len()));
        }
        let layers = self
            .layers
            .iter()
            .zip(params.chunks(2))
            .map(|(l, p)| Layer {
                weights: p[0].clone(),
                bias: p[1].clone(),
                activation: l.activation,
            })
            .collect();
        Self::new(layers)
    }

    /// Checkpoint entries: tag `2i` holds layer i's weights, `2i + 1` its bias.
    pub fn checkpoint_entries(&self) -> Vec<(u8, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [((2 * i) as u8, &l.weights), ((2 * i + 1) as u8, &l.bias)])
            .collect()
    }

    pub fn from_checkpoint_entries(entries: Vec<(u8, Tensor)>) -> Result<Self> {
        if entries.is_empty() || entries.len() % 2 != 0 {
            return Err(Error::Format("checkpoint needs weight/bias pairs".into()));
        }
        let n = entries.len() / 2;
        let mut layers = Vec::with_capacity(n);
        let mut it = entries.into_iter().enumerate();
        while let (Some((i, (tw, w))), Some((_, (tb, b)))) = (it.next(), it.next()) {
            if usize::from(tw) != i || usize::from(tb) != i + 1 {
                return Err(Error::Format(format!("unexpected checkpoint tags {tw}, {tb}")));
            }
            layers.push(Layer {
                weights: w,
                bias: b,
                activation: if layers.len() + 1 == n {
                    Activation::None
                } else {
                    Activation::Relu
                },
            });
        }
        Self::new(layers)
    }

    fn check_numerics(&self, cfgs: &[LayerNumerics]) -> Result<()> {
        if cfgs.len() != self.layers.len() {
            return Err(Error::SizeMismatch(cfgs.len(), self.layers.len()));
        }
        Ok(())
    }

    /// Logits for `x: [batch × in]`. Each layer's GEMM runs with that
    /// layer's numerics; bias add and activation stay in FP32.
    pub fn forward(&self, x: &Tensor, cfgs: &[LayerNumerics]) -> Result<(Tensor, ForwardCache)> {
        self.check_numerics(cfgs)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (layer, cfg) in self.layers.iter().zip(cfgs) {
            let mut z = linear(&h, &layer.weights, cfg)?;
            let out = layer.out_dim();
            for row in z.data_mut().chunks_mut(out) {
                for (v, b) in row.iter_mut().zip(layer.bias.data()) {
                    *v += b;
                }
            }
            let a = match layer.activation {
                Activation::Relu => z.map(|v| v.max(0.0)),
                Activation::None => z.clone(),
            };
            inputs.push(std::mem::replace(&mut h, a));
            pre_activations.push(z);
        }
        Ok((
            h,
            ForwardCache {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Gradients of the loss given `grad_logits`. Both backward GEMMs use the
    /// layer's numerics, except the weight-gradient GEMM when
    /// `quantize_weight_grad` is false. The first layer's input gradient is
    /// never formed.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_logits: &Tensor,
        cfgs: &[LayerNumerics],
        quantize_weight_grad: bool,
    ) -> Result<Gradients> {
        self.check_numerics(cfgs)?;
        let n = self.layers.len();
        let mut weights = vec![Tensor::zeros(vec![0]); n];
        let mut biases = vec![Tensor::zeros(vec![0]); n];
        let mut g = grad_logits.clone();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            if layer.activation == Activation::Relu {
                for (d, &z) in g.data_mut().iter_mut().zip(cache.pre_activations[i].data()) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let out = layer.out_dim();
            let mut db = vec![0.0f32; out];
            for row in g.data().chunks(out) {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            biases[i] = Tensor::new(vec![out], db)?;
            let gt = g.transpose()?;
            let xt = cache.inputs[i].transpose()?;
            let dw_cfg = if quantize_weight_grad { cfgs[i] } else { None };
            weights[i] = linear(&gt, &xt, &dw_cfg)?;
            if i > 0 {
                g = linear(&g, &layer.weights.transpose()?, &cfgs[i])?;
            }
        }
        Ok(Gradients { weights, biases })
    }
}

pub(crate) fn role_of(index: usize, num_layers: usize) -> LayerRole {
    if index + 1 == num_layers {
        LayerRole::Last
    } else if index == 0 {
        LayerRole::First
    } else {
        LayerRole::Middle
    }
}

/// Mean softmax cross-entropy over the batch.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Tensor,
    pub correct: usize,
}

/// Loss, gradient with respect to the logits, and the number of correct
/// argmax predictions (ties resolve to the lowest class index).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    let [b, k] = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::SizeMismatch(labels.len(), b));
    }
    if b == 0 {
        return Err(Error::Empty);
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Invalid(format!("label {bad} out of range for {k} classes")));
    }
    let mut grad = vec![0.0f32; b * k];
    let mut loss = 0.0f64;
    let mut correct = 0;
    let scale = 1.0 / b as f32;
    for ((row, g), &y) in logits.data().chunks(k).zip(grad.chunks_mut(k)).zip(labels) {
        let (argmax, max) = row
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
        if argmax == y {
            correct += 1;
        }
        let mut sum = 0.0f32;
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp();
            sum += *gi;
        }
        loss += f64::from(sum.ln() - (row[y] - max));
        for gi in g.iter_mut() {
            *gi = *gi / sum * scale;
        }
        g[y] -= scale;
    }
    Ok(LossOutput {
        loss: loss / b as f64,
        grad: Tensor::new(vec![b, k], grad)?,
        correct,
    })
}
