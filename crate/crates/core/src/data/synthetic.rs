//! Small generated tasks for fast experiments and tests.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Targets};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    /// Two classes in 2-D with means `(±1.5, 0)` and unit-variance noise.
    TwoGaussians,
    /// Two interleaved half circles in 2-D, noise std 0.1.
    TwoMoonsLike,
    /// `y = x·w* + ε` with `x ∈ R^3`, standard-normal `x` and `w*`, noise std 0.1.
    NoisyLinearRegression,
}

impl FromStr for SyntheticTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_gaussians" => Ok(Self::TwoGaussians),
            "two_moons_like" => Ok(Self::TwoMoonsLike),
            "noisy_linear_regression" => Ok(Self::NoisyLinearRegression),
            other => Err(Error::UnknownTask(other.to_string())),
        }
    }
}

pub const REGRESSION_DIM: usize = 3;
pub const REGRESSION_NOISE: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// Generating weights `w*` of the regression task.
    pub true_weights: Option<Vec<f64>>,
}

pub fn make_synthetic(task: &str, n: usize, seed: u64) -> Result<Synthetic> {
    make_synthetic_with_noise(task.parse()?, n, seed, 1.0)
}

/// Like [`make_synthetic`] with the noise standard deviation multiplied by
/// `noise_scale` (0 gives noiseless data).
pub fn make_synthetic_with_noise(task: SyntheticTask, n: usize, seed: u64, noise_scale: f64) -> Result<Synthetic> {
    if n < 4 {
        return Err(Error::Config(format!("synthetic tasks need n >= 4, got {n}")));
    }
    let mut rng = rng::keyed(seed, Purpose::Synthetic, 0);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    match task {
        SyntheticTask::TwoGaussians => {
            let mut x = Vec::with_capacity(2 * n);
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            for &y in &labels {
                let mean = if y == 0 { -1.5 } else { 1.5 };
                x.push(mean + noise_scale * normal());
                x.push(noise_scale * normal());
            }
            Ok(Synthetic {
                dataset: Dataset::new(Tensor::matrix(n, 2, x)?, Targets::Classes(labels), 2)?,
                true_weights: None,
            })
        }
        SyntheticTask::TwoMoonsLike => {
            let mut rng = rng::keyed(seed, Purpose::Synthetic, 1);
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let mut x = Vec::with_capacity(2 * n);
            for &y in &labels {
                let t: f64 = rng.gen_range(0.0..PI);
                let (px, py) = if y == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                x.push(px + 0.1 * noise_scale * normal());
                x.push(py + 0.1 * noise_scale * normal());
            }
            Ok(Synthetic {
                dataset: Dataset::new(Tensor::matrix(n, 2, x)?, Targets::Classes(labels), 2)?,
                true_weights: None,
            })
        }
        SyntheticTask::NoisyLinearRegression => {
            let w: Vec<f64> = (0..REGRESSION_DIM).map(|_| normal()).collect();
            let mut x = Vec::with_capacity(REGRESSION_DIM * n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let row: Vec<f64> = (0..REGRESSION_DIM).map(|_| normal()).collect();
                let clean: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
                y.push(clean + REGRESSION_NOISE * noise_scale * normal());
                x.extend(row);
            }
            Ok(Synthetic {
                dataset: Dataset::new(Tensor::matrix(n, REGRESSION_DIM, x)?, Targets::Real(y), 0)?,
                true_weights: Some(w),
            })
        }
    }
}
