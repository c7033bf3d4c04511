mod common;

use common::mlp_loss_f64;
use hbfp::train::{make_dataset, softmax_cross_entropy, DatasetSpec, MlpModel};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Analytic FP32 gradients against central differences of an f64 loss.
#[test]
fn fp32_backward_matches_finite_differences() {
    let split = make_dataset(&DatasetSpec::GaussianMixture {
        train: 24,
        val: 4,
        classes: 4,
        dim: 10,
        spread: 1.5,
        seed: 4,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = MlpModel::init(&[10, 32, 32, 4], &mut rng).unwrap();
    let (x, y) = split.train.gather(&(0..24).collect::<Vec<_>>());
    let cfgs = vec![None; 3];
    let (logits, cache) = model.forward(&x, &cfgs).unwrap();
    let out = softmax_cross_entropy(&logits, &y).unwrap();
    let grads = model.backward(&cache, &out.grad, &cfgs, true).unwrap();
    let analytic: Vec<f32> = grads
        .weights
        .iter()
        .zip(&grads.biases)
        .flat_map(|(w, b)| w.data().iter().chain(b.data()).copied().collect::<Vec<_>>())
        .collect();

    let params: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|t| t.data().iter().map(|&v| f64::from(v)).collect())
        .collect();
    let offsets: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.len()).map(move |j| (i, j)))
        .collect();
    assert!(offsets.len() >= 1000);

    let (base_loss, _) = mlp_loss_f64(&model, &params, x.data(), &y);
    assert!((base_loss - out.loss).abs() < 1e-5);

    let mut checked = 0;
    let mut worst = 0f64;
    for flat in sample(&mut rng, offsets.len(), 1000) {
        let (pi, pj) = offsets[flat];
        let h = 1e-3 * params[pi][pj].abs().max(1.0);
        let mut plus = params.clone();
        plus[pi][pj] += h;
        let mut minus = params.clone();
        minus[pi][pj] -= h;
        let (lp, sp) = mlp_loss_f64(&model, &plus, x.data(), &y);
        let (lm, sm) = mlp_loss_f64(&model, &minus, x.data(), &y);
        if sp != sm {
            continue; // a ReLU changed state inside the stencil
        }
        let fd = (lp - lm) / (2.0 * h);
        let g = f64::from(analytic[flat]);
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
        checked += 1;
    }
    assert!(checked >= 950, "only {checked} kink-free coordinates");
    assert!(worst < 1e-4, "worst relative error {worst}");
}
