use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{make_dataset, Dataset, DatasetSpec};
use super::model::{softmax_cross_entropy, LayerNumerics, MlpModel};
use super::schedule::{numerics_label, NumericMode};
use crate::error::{Error, Result};
use crate::io::{decode_container, encode_container, write_atomic};
use crate::kernels::op_count;
use crate::tensor::Tensor;

/// Everything that determines a run. Missing JSON fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    /// Epochs at whose start the learning rate is multiplied by `lr_decay`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay: f32,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub dataset: DatasetSpec,
    pub numeric: NumericMode,
    /// When false the weight-gradient GEMM always runs in FP32.
    pub quantize_weight_grad: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 0.1,
            momentum: 0.9,
            lr_decay_epochs: vec![50, 75],
            lr_decay: 0.1,
            seed: 0,
            hidden: vec![128, 128],
            dataset: DatasetSpec::default(),
            numeric: NumericMode::Fp32,
            quantize_weight_grad: true,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return bad("lr_decay must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        self.numeric.validate(self.epochs)
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        let k = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.lr_decay.powi(k as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Per-layer formats joined with `/`.
    pub active_cfg: String,
}

/// Header of the per-epoch curve CSV.
pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,active_cfg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub mode: String,
    pub epochs: Vec<EpochRecord>,
    pub final_val_acc: f64,
    pub final_val_loss: f64,
    /// Multiply-accumulates per format label, forward and backward.
    pub macs: BTreeMap<String, u64>,
    pub mac_fraction: BTreeMap<String, f64>,
    /// First epoch whose loss was not finite; the report stops there.
    pub diverged_at: Option<usize>,
}

impl RunReport {
    pub fn epoch_csv(&self) -> String {
        let mut s = format!("{EPOCH_CSV_HEADER}\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.active_cfg
            ));
        }
        s
    }

    pub fn mac_fraction_of(&self, label: &str) -> f64 {
        self.mac_fraction.get(label).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub model: MlpModel,
}

/// Mean loss and accuracy over `data`, in batches of `batch_size`.
pub fn evaluate(
    model: &MlpModel,
    data: &Dataset,
    cfgs: &[LayerNumerics],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut loss = 0.0;
    let mut correct = 0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.gather(chunk);
        let (logits, _) = model.forward(&x, cfgs)?;
        let out = softmax_cross_entropy(&logits, &y)?;
        loss += out.loss * chunk.len() as f64;
        correct += out.correct;
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn model_dims(cfg: &TrainConfig, data: &Dataset) -> Vec<usize> {
    let mut dims = vec![data.features()];
    dims.extend(&cfg.hidden);
    dims.push(data.classes);
    dims
}

/// Model with the architecture implied by `cfg` and its dataset, initialized
/// from `cfg.seed`.
pub fn initial_model(cfg: &TrainConfig, data: &Dataset) -> Result<MlpModel> {
    MlpModel::init(&model_dims(cfg, data), &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

fn count_macs(
    model: &MlpModel,
    batch: usize,
    cfgs: &[LayerNumerics],
    quantize_weight_grad: bool,
    macs: &mut BTreeMap<String, u64>,
) {
    for (i, (layer, cfg)) in model.layers().iter().zip(cfgs).enumerate() {
        let (n_in, n_out) = (layer.in_dim(), layer.out_dim());
        let label = numerics_label(cfg);
        let mut gemm = op_count(batch, n_in, n_out);
        if i > 0 {
            gemm += op_count(batch, n_out, n_in);
        }
        *macs.entry(label).or_default() += gemm;
        let dw = if quantize_weight_grad { *cfg } else { None };
        *macs.entry(numerics_label(&dw)).or_default() += op_count(n_out, batch, n_in);
    }
}

/// Overflow inside a step surfaces as a non-finite tensor; treat it as
/// divergence rather than failure.
fn finite<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::NonFinite(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// SGD with momentum on FP32 master weights; every GEMM runs with the
/// numerics the schedule assigns to its layer and epoch. Validation uses the
/// same numerics as the epoch it closes.
pub fn train(cfg: &TrainConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let split = make_dataset(&cfg.dataset)?;
    let mut model = initial_model(cfg, &split.train)?;
    let mut velocity: Vec<Tensor> = model
        .params()
        .iter()
        .map(|p| Tensor::zeros(p.shape().to_vec()))
        .collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut macs = BTreeMap::new();
    let mut diverged_at = None;

    'epochs: for epoch in 0..cfg.epochs {
        let cfgs = cfg.numeric.layer_numerics(epoch, cfg.epochs, model.num_layers());
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = split.train.gather(chunk);
            let step = finite(model.forward(&x, &cfgs).and_then(|(logits, cache)| {
                let out = softmax_cross_entropy(&logits, &y)?;
                let grads = model.backward(&cache, &out.grad, &cfgs, cfg.quantize_weight_grad)?;
                Ok((out, grads))
            }))?;
            let Some((out, grads)) = step.filter(|(o, _)| o.loss.is_finite()) else {
                diverged_at = Some(epoch);
                break 'epochs;
            };
            loss_sum += out.loss * chunk.len() as f64;
            correct += out.correct;
            count_macs(&model, chunk.len(), &cfgs, cfg.quantize_weight_grad, &mut macs);
            let grad_list = grads
                .weights
                .iter()
                .zip(&grads.biases)
                .flat_map(|(w, b)| [w, b]);
            let mut params = model.params();
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad_list) {
                for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vv = cfg.momentum * *vv + gv;
                    *pv -= lr * *vv;
                }
            }
            if params.iter().any(|p| p.check_finite().is_err()) {
                diverged_at = Some(epoch);
                break 'epochs;
            }
            model = model.with_params(&params)?;
        }
        let Some((val_loss, val_acc)) = finite(evaluate(&model, &split.val, &cfgs, 256))? else {
            diverged_at = Some(epoch);
            break;
        };
        let n = split.train.len() as f64;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
            active_cfg: cfgs.iter().map(numerics_label).collect::<Vec<_>>().join("/"),
        });
        if !val_loss.is_finite() {
            diverged_at = Some(epoch);
            break;
        }
    }

    let total: u64 = macs.values().sum();
    let mac_fraction = macs
        .iter()
        .map(|(k, &v)| (k.clone(), if total == 0 { 0.0 } else { v as f64 / total as f64 }))
        .collect();
    let last = records.last();
    let report = RunReport {
        seed: cfg.seed,
        mode: cfg.numeric.label(),
        final_val_acc: last.map_or(0.0, |r| r.val_acc),
        final_val_loss: last.map_or(f64::INFINITY, |r| r.val_loss),
        epochs: records,
        macs,
        mac_fraction,
        diverged_at,
    };
    Ok(RunOutput { report, model })
}

pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_container(&model.checkpoint_entries())?)
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    MlpModel::from_checkpoint_entries(decode_container(&std::fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfp::QuantConfig;
    use crate::train::BoosterSchedule;

    fn small(numeric: NumericMode) -> TrainConfig {
        TrainConfig {
            epochs: 4,
            batch_size: 16,
            lr_decay_epochs: vec![2],
            hidden: vec![16, 16],
            dataset: DatasetSpec::Spirals {
                train: 64,
                val: 32,
                turns: 1.0,
                noise: 0.05,
                seed: 2,
            },
            numeric,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let c = small(NumericMode::Hbfp(QuantConfig::hbfp(4, 16).unwrap()));
        let a = train(&c).unwrap();
        let b = train(&c).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.model, b.model);
        let other = train(&TrainConfig { seed: 9, ..c }).unwrap();
        assert_ne!(other.report.epochs, a.report.epochs);
    }

    #[test]
    fn mac_accounting() {
        let c = small(NumericMode::Booster(BoosterSchedule::default()));
        let r = train(&c).unwrap().report;
        // 2→16→16→2, 4 batches of 16 per epoch, 4 epochs.
        let per_sample = |i: u64, o: u64, first: bool| i * o * if first { 2 } else { 3 };
        let edge = per_sample(2, 16, true) + per_sample(16, 2, false);
        let mid = per_sample(16, 16, false);
        let samples = 64 * 4;
        assert_eq!(r.macs["hbfp4@64"], mid * 64 * 3);
        assert_eq!(r.macs["hbfp6@64"], edge * samples + mid * 64);
        let f: f64 = r.mac_fraction.values().sum();
        assert!((f - 1.0).abs() < 1e-12);
        assert_eq!(r.epochs[0].active_cfg, "hbfp6@64/hbfp4@64/hbfp6@64");
        assert_eq!(r.epochs[3].active_cfg, "hbfp6@64/hbfp6@64/hbfp6@64");
    }

    #[test]
    fn exempt_weight_grad_counts_as_fp32() {
        let c = TrainConfig {
            quantize_weight_grad: false,
            ..small(NumericMode::Hbfp(QuantConfig::hbfp(6, 64).unwrap()))
        };
        let r = train(&c).unwrap().report;
        assert!(r.macs["fp32"] > 0);
    }

    #[test]
    fn divergence_yields_partial_report() {
        let c = TrainConfig {
            lr: 1e30,
            momentum: 0.0,
            ..small(NumericMode::Fp32)
        };
        let r = train(&c).unwrap().report;
        assert!(r.diverged_at.is_some());
        assert!(r.epochs.len() < 4);
    }

    #[test]
    fn config_json_defaults_and_rejection() {
        let c = TrainConfig::from_json(r#"{"epochs": 3, "numeric": {"mode": "fp32"}}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.hidden, vec![128, 128]);
        assert!(TrainConfig::from_json(r#"{"epoch": 3}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"epochs": 0}"#).is_err());
        let round: TrainConfig =
            serde_json::from_str(&serde_json::to_string(&TrainConfig::default()).unwrap()).unwrap();
        assert_eq!(round, TrainConfig::default());
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 0.1);
        assert!((c.lr_at(50) - 0.01).abs() < 1e-9);
        assert!((c.lr_at(99) - 0.001).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_round_trip() {
        let out = train(&small(NumericMode::Fp32)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.hbc");
        save_checkpoint(&out.model, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), out.model);
    }
}
