use std::f32::consts::PI;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_tensor_file;
use crate::tensor::Tensor;

/// Labelled samples: `x` is `[n × features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<usize>, classes: usize) -> Result<Self> {
        let [n, _] = x.dims2()?;
        if y.len() != n {
            return Err(Error::SizeMismatch(y.len(), n));
        }
        if n == 0 {
            return Err(Error::Empty);
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
            return Err(Error::Invalid(format!("label {bad} with {classes} classes")));
        }
        Ok(Self { x, y, classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.shape()[1]
    }

    /// Rows `idx` gathered into a new batch.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.features();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.x.data()[i * d..(i + 1) * d]);
        }
        (
            Tensor::new(vec![idx.len(), d], data).expect("rows are finite"),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
}

/// Where a run's data comes from. Generated sets are balanced: each class
/// receives `n / classes` samples, the first `n % classes` classes one more.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Two interleaved spiral arms in the plane.
    Spirals {
        train: usize,
        val: usize,
        #[serde(default = "default_turns")]
        turns: f32,
        #[serde(default = "default_noise")]
        noise: f32,
        #[serde(default)]
        seed: u64,
    },
    /// Isotropic unit-variance clusters around random centers.
    GaussianMixture {
        train: usize,
        val: usize,
        classes: usize,
        dim: usize,
        #[serde(default = "default_spread")]
        spread: f32,
        #[serde(default)]
        seed: u64,
    },
    /// Noisy, shifted seven-segment digits on an 8×8 grid (64 features,
    /// 10 classes).
    Digits {
        train: usize,
        val: usize,
        #[serde(default = "default_noise")]
        noise: f32,
        #[serde(default)]
        seed: u64,
    },
    /// HBT1 files: `[n × d]` features and `[n]` integer-valued labels.
    Files {
        train_x: PathBuf,
        train_y: PathBuf,
        val_x: PathBuf,
        val_y: PathBuf,
    },
}

fn default_turns() -> f32 {
    1.5
}

fn default_noise() -> f32 {
    0.1
}

fn default_spread() -> f32 {
    2.0
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::Spirals {
            train: 1000,
            val: 1000,
            turns: default_turns(),
            noise: default_noise(),
            seed: 0,
        }
    }
}

fn balanced_labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    y.shuffle(rng);
    y
}

fn spiral_point(class: usize, turns: f32, noise: f32, rng: &mut ChaCha8Rng) -> [f32; 2] {
    let t: f32 = rng.random_range(0.05..1.0);
    let angle = 2.0 * PI * turns * t + PI * class as f32;
    let nx: f32 = StandardNormal.sample(rng);
    let ny: f32 = StandardNormal.sample(rng);
    [t * angle.cos() + noise * nx, t * angle.sin() + noise * ny]
}

/// Segments a..g of a seven-segment display, as (row, col) cells on an 8×8
/// grid before shifting.
fn segment_cells(segment: usize) -> Vec<(usize, usize)> {
    let h = |r: usize| (2..=5).map(move |c| (r, c)).collect::<Vec<_>>();
    let v = |c: usize, r0: usize| (r0..r0 + 4).map(move |r| (r, c)).collect::<Vec<_>>();
    match segment {
        0 => h(1),
        1 => v(5, 1),
        2 => v(5, 4),
        3 => h(7),
        4 => v(2, 4),
        5 => v(2, 1),
        _ => h(4),
    }
}

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],
    &[1, 2],
    &[0, 1, 6, 4, 3],
    &[0, 1, 6, 2, 3],
    &[5, 6, 1, 2],
    &[0, 5, 6, 2, 3],
    &[0, 5, 4, 3, 2, 6],
    &[0, 1, 2],
    &[0, 1, 2, 3, 4, 5, 6],
    &[0, 1, 2, 3, 5, 6],
];

fn digit_image(class: usize, noise: f32, rng: &mut ChaCha8Rng) -> [f32; 64] {
    let mut img = [0.0f32; 64];
    let dx: i32 = rng.random_range(-1..=1);
    let dy: i32 = rng.random_range(-1..=0);
    let ink: f32 = rng.random_range(0.7..1.0);
    for &s in DIGIT_SEGMENTS[class] {
        for (r, c) in segment_cells(s) {
            let (r, c) = ((r as i32 + dy) as usize, (c as i32 + dx) as usize);
            img[r * 8 + c] = ink;
        }
    }
    for p in img.iter_mut() {
        let n: f32 = StandardNormal.sample(rng);
        *p += noise * n;
    }
    img
}

fn generate(
    n: usize,
    classes: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
    mut point: impl FnMut(usize, &mut ChaCha8Rng) -> Vec<f32>,
) -> Result<Dataset> {
    let y = balanced_labels(n, classes, rng);
    let mut data = Vec::with_capacity(n * dim);
    for &c in &y {
        data.extend(point(c, rng));
    }
    Dataset::new(Tensor::new(vec![n, dim], data)?, y, classes)
}

fn load_labels(path: &PathBuf) -> Result<Vec<usize>> {
    let t = read_tensor_file(path)?;
    t.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e6 {
                Ok(v as usize)
            } else {
                Err(Error::Format(format!("label {v} is not a class index")))
            }
        })
        .collect()
}

fn load_pair(x: &PathBuf, y: &PathBuf) -> Result<(Tensor, Vec<usize>)> {
    let x = read_tensor_file(x)?;
    let [_, _] = x.dims2()?;
    Ok((x, load_labels(y)?))
}

/// Train and validation splits. Generated data depends only on the dataset spec
/// (including its own `seed`), so runs that differ in training seed share
/// the same data.
pub fn make_dataset(spec: &DatasetSpec) -> Result<Split> {
    let check = |train: usize, val: usize| {
        if train == 0 || val == 0 {
            Err(Error::InvalidConfig("dataset splits must be non-empty".into()))
        } else {
            Ok(())
        }
    };
    match *spec {
        DatasetSpec::Spirals {
            train,
            val,
            turns,
            noise,
            seed,
        } => {
            check(train, val)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut gen = |n| {
                generate(n, 2, 2, &mut rng, |c, r| spiral_point(c, turns, noise, r).to_vec())
            };
            Ok(Split {
                train: gen(train)?,
                val: gen(val)?,
            })
        }
        DatasetSpec::GaussianMixture {
            train,
            val,
            classes,
            dim,
            spread,
            seed,
        } => {
            check(train, val)?;
            if classes < 2 || dim == 0 {
                return Err(Error::InvalidConfig("mixture needs ≥2 classes and dim ≥1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let centers = Normal::new(0.0f32, spread)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let centers: Vec<f32> = (0..classes * dim).map(|_| centers.sample(&mut rng)).collect();
            let mut gen = |n| {
                generate(n, classes, dim, &mut rng, |c, r| {
                    centers[c * dim..(c + 1) * dim]
                        .iter()
                        .map(|&m| {
                            let z: f32 = StandardNormal.sample(r);
                            m + z
                        })
                        .collect()
                })
            };
            Ok(Split {
                train: gen(train)?,
                val: gen(val)?,
            })
        }
        DatasetSpec::Digits {
            train,
            val,
            noise,
            seed,
        } => {
            check(train, val)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut gen = |n| generate(n, 10, 64, &mut rng, |c, r| digit_image(c, noise, r).to_vec());
            Ok(Split {
                train: gen(train)?,
                val: gen(val)?,
            })
        }
        DatasetSpec::Files {
            ref train_x,
            ref train_y,
            ref val_x,
            ref val_y,
        } => {
            let (tx, ty) = load_pair(train_x, train_y)?;
            let (vx, vy) = load_pair(val_x, val_y)?;
            if tx.shape()[1] != vx.shape()[1] {
                return Err(Error::Shape("train and val feature counts differ".into()));
            }
            let classes = ty.iter().chain(&vy).max().map_or(0, |&m| m + 1);
            Ok(Split {
                train: Dataset::new(tx, ty, classes)?,
                val: Dataset::new(vx, vy, classes)?,
            })
        }
    }
}
