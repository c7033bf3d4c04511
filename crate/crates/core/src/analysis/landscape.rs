use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a parameter tensor takes part in direction sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Weights whose first axis indexes filters (output rows).
    Filters,
    /// Biases and normalization parameters; never perturbed.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandscapeMode {
    /// One direction; `steps` points.
    Slice,
    /// Two directions; `steps × steps` points.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSpec {
    /// Coefficients run over `[-span, span]`.
    pub span: f64,
    /// Points per axis; must be odd so that 0 is on the lattice.
    pub steps: usize,
    pub mode: LandscapeMode,
    pub seed: u64,
    pub log_scale: bool,
}

impl LandscapeSpec {
    pub fn slice(seed: u64) -> Self {
        Self {
            span: 1.0,
            steps: 51,
            mode: LandscapeMode::Slice,
            seed,
            log_scale: true,
        }
    }

    pub fn grid(seed: u64) -> Self {
        Self {
            steps: 25,
            mode: LandscapeMode::Grid,
            ..Self::slice(seed)
        }
    }
}

/// Loss values sampled around a parameter point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapeGrid {
    pub alphas: Vec<f64>,
    pub betas: Option<Vec<f64>>,
    /// `losses[i][j]` at `alphas[i]`, `betas[j]` (one column for a slice).
    /// Non-finite losses are stored as `+inf`.
    pub losses: Vec<Vec<f64>>,
    /// Whether CSV output reports `log10(loss)`.
    pub log_scale: bool,
    pub directions_seed: u64,
}

impl LandscapeGrid {
    pub fn center(&self) -> f64 {
        let i = self.alphas.len() / 2;
        let j = self.betas.as_ref().map_or(0, |b| b.len() / 2);
        self.losses[i][j]
    }

    /// CSV with columns `alpha,beta,loss`; slices report `beta = 0`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,beta,loss\n");
        for (i, a) in self.alphas.iter().enumerate() {
            for (j, loss) in self.losses[i].iter().enumerate() {
                let b = self.betas.as_ref().map_or(0.0, |b| b[j]);
                let l = if self.log_scale { loss.log10() } else { *loss };
                out.push_str(&format!("{a},{b},{l}\n"));
            }
        }
        out
    }
}

fn gaussian_like(params: &[Tensor], rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    params
        .iter()
        .map(|p| {
            Tensor::from_fn(p.shape().to_vec(), |_| {
                let v: f32 = StandardNormal.sample(rng);
                v
            })
        })
        .collect()
}

fn filter_normalize(direction: &mut Tensor, weights: &Tensor, kind: ParamKind) {
    if kind == ParamKind::Fixed {
        direction.data_mut().fill(0.0);
        return;
    }
    let rows = weights.shape().first().copied().unwrap_or(1).max(1);
    let width = weights.len() / rows;
    if width == 0 {
        return;
    }
    for (d, w) in direction
        .data_mut()
        .chunks_mut(width)
        .zip(weights.data().chunks(width))
    {
        let wn = w.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        let dn = d.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        let scale = if dn > 0.0 { wn / dn } else { 0.0 };
        for v in d.iter_mut() {
            *v = (f64::from(*v) * scale) as f32;
        }
    }
}

/// Two filter-normalized Gaussian directions in parameter space.
///
/// Every filter (row along the first axis) of a [`ParamKind::Filters`] tensor
/// is rescaled to the norm of the matching weight filter; fixed parameters
/// get a zero direction.
pub fn random_directions(
    params: &[Tensor],
    kinds: &[ParamKind],
    seed: u64,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    if params.len() != kinds.len() {
        return Err(Error::SizeMismatch(params.len(), kinds.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d1 = gaussian_like(params, &mut rng);
    let mut d2 = gaussian_like(params, &mut rng);
    for d in [&mut d1, &mut d2] {
        for ((t, w), &k) in d.iter_mut().zip(params).zip(kinds) {
            filter_normalize(t, w, k);
        }
    }
    Ok((d1, d2))
}

/// Cosine of the angle between two directions taken as flat vectors.
pub fn direction_cosine(d1: &[Tensor], d2: &[Tensor]) -> f64 {
    let mut dot = 0.0;
    let mut n1 = 0.0;
    let mut n2 = 0.0;
    for (a, b) in d1.iter().zip(d2) {
        for (&x, &y) in a.data().iter().zip(b.data()) {
            let (x, y) = (f64::from(x), f64::from(y));
            dot += x * y;
            n1 += x * x;
            n2 += y * y;
        }
    }
    dot / (n1.sqrt() * n2.sqrt())
}

/// `span · (2i - (steps - 1)) / (steps - 1)`: symmetric, with an exact 0 in
/// the middle.
fn lattice(span: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![0.0];
    }
    let half = (steps - 1) as f64;
    (0..steps)
        .map(|i| span * (2.0 * i as f64 - half) / half)
        .collect()
}

fn perturb(params: &[Tensor], d1: &[Tensor], d2: &[Tensor], alpha: f64, beta: f64) -> Vec<Tensor> {
    params
        .iter()
        .zip(d1.iter().zip(d2))
        .map(|(p, (a, b))| {
            let mut t = p.clone();
            for ((v, &x), &y) in t.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                let mut s = f64::from(*v);
                if alpha != 0.0 {
                    s += alpha * f64::from(x);
                }
                if beta != 0.0 {
                    s += beta * f64::from(y);
                }
                *v = s as f32;
            }
            t
        })
        .collect()
}

/// Evaluates `loss` at `θ + α·d1 + β·d2` over the lattice described by
/// `spec`. The center point is evaluated at the unperturbed parameters.
/// Points are evaluated in parallel; each evaluation must itself be
/// deterministic for the grid to be reproducible.
pub fn landscape<F>(
    params: &[Tensor],
    kinds: &[ParamKind],
    spec: &LandscapeSpec,
    loss: F,
) -> Result<LandscapeGrid>
where
    F: Fn(&[Tensor]) -> f64 + Sync,
{
    if spec.steps == 0 || spec.steps % 2 == 0 {
        return Err(Error::Invalid(format!(
            "landscape steps must be odd, got {}",
            spec.steps
        )));
    }
    if !spec.span.is_finite() || spec.span <= 0.0 {
        return Err(Error::Invalid("landscape span must be positive".into()));
    }
    let (d1, d2) = random_directions(params, kinds, spec.seed)?;
    let alphas = lattice(spec.span, spec.steps);
    let betas = match spec.mode {
        LandscapeMode::Slice => None,
        LandscapeMode::Grid => Some(alphas.clone()),
    };
    let beta_axis = betas.clone().unwrap_or_else(|| vec![0.0]);
    let points: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| beta_axis.iter().map(move |&b| (a, b)))
        .collect();
    let values: Vec<f64> = points
        .par_iter()
        .map(|&(a, b)| {
            let l = if a == 0.0 && b == 0.0 {
                loss(params)
            } else {
                loss(&perturb(params, &d1, &d2, a, b))
            };
            if l.is_finite() {
                l
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let losses = values
        .chunks(beta_axis.len())
        .map(<[f64]>::to_vec)
        .collect();
    Ok(LandscapeGrid {
        alphas,
        betas,
        losses,
        log_scale: spec.log_scale,
        directions_seed: spec.seed,
    })
}
