//! First-order optimizers for the inner network, including hypergradient
//! descent (HD) variants that adapt the learning rate online.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::InnerParams;

pub const MOMENTUM: f64 = 0.9;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Lower clamp for HD learning rates.
pub const LR_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
    /// Heavy-ball momentum with a hypergradient-adapted learning rate.
    SgdHd,
    /// Adam with a hypergradient-adapted learning rate.
    AdamHd,
}

impl OptimizerKind {
    pub fn is_hd(self) -> bool {
        matches!(self, Self::SgdHd | Self::AdamHd)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Momentum => "momentum",
            Self::Adam => "adam",
            Self::SgdHd => "sgdhd",
            Self::AdamHd => "adamhd",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sgd" => Self::Sgd,
            "momentum" => Self::Momentum,
            "adam" => Self::Adam,
            "sgdhd" => Self::SgdHd,
            "adamhd" => Self::AdamHd,
            other => return Err(Error::Config(format!("unknown optimizer `{other}`"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    hyper_lr: f64,
    velocity: Vec<f64>,
    second_moment: Vec<f64>,
    prev_grad: Option<Vec<f64>>,
    step_count: u64,
}

impl OptimizerState {
    /// `hyper_lr` is the hypergradient step size `β`; ignored by non-HD kinds.
    pub fn new(kind: OptimizerKind, lr: f64, hyper_lr: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(hyper_lr.is_finite() && hyper_lr >= 0.0) {
            return Err(Error::Config(format!("hypergradient step must be non-negative, got {hyper_lr}")));
        }
        Ok(Self {
            kind,
            lr,
            hyper_lr: if kind.is_hd() { hyper_lr } else { 0.0 },
            velocity: Vec::new(),
            second_moment: Vec::new(),
            prev_grad: None,
            step_count: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn hyper_lr(&self) -> f64 {
        self.hyper_lr
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn prev_grad(&self) -> Option<&[f64]> {
        self.prev_grad.as_deref()
    }

    /// Hypergradient learning-rate update `η ← max(η + β⟨g_t, g_{t-1}⟩, η_min)`.
    ///
    /// The first call only remembers the gradient. No-op for non-HD kinds.
    pub fn hd_update(&mut self, grad: &[f64]) -> Result<()> {
        if !self.kind.is_hd() {
            return Ok(());
        }
        check_finite(grad)?;
        if let Some(prev) = &self.prev_grad {
            if prev.len() != grad.len() {
                return Err(Error::LengthMismatch {
                    what: "gradient vs previous gradient",
                    left: grad.len(),
                    right: prev.len(),
                });
            }
            let dot: f64 = grad.iter().zip(prev).map(|(a, b)| a * b).sum();
            let lr = self.lr + self.hyper_lr * dot;
            if !lr.is_finite() {
                return Err(Error::NonFinite("hypergradient learning rate".into()));
            }
            self.lr = lr.max(LR_MIN);
        }
        match &mut self.prev_grad {
            Some(prev) => prev.copy_from_slice(grad),
            None => self.prev_grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    /// One parameter update with the current learning rate.
    pub fn inner_step(&mut self, params: &mut InnerParams, grad: &[f64]) -> Result<()> {
        if grad.len() != params.num_params() {
            return Err(Error::LengthMismatch {
                what: "gradient vs parameters",
                left: grad.len(),
                right: params.num_params(),
            });
        }
        check_finite(grad)?;
        self.step_count += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, g) in params.values_mut().zip(grad) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::Momentum | OptimizerKind::SgdHd => {
                if self.velocity.is_empty() {
                    self.velocity = vec![0.0; grad.len()];
                }
                for ((w, g), v) in params.values_mut().zip(grad).zip(&mut self.velocity) {
                    *v = MOMENTUM * *v + g;
                    *w -= lr * *v;
                }
            }
            OptimizerKind::Adam | OptimizerKind::AdamHd => {
                if self.velocity.is_empty() {
                    self.velocity = vec![0.0; grad.len()];
                    self.second_moment = vec![0.0; grad.len()];
                }
                let t = self.step_count as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((w, g), m), v) in params
                    .values_mut()
                    .zip(grad)
                    .zip(&mut self.velocity)
                    .zip(&mut self.second_moment)
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }

    /// HD learning-rate update (for HD kinds) followed by the parameter step.
    pub fn step(&mut self, params: &mut InnerParams, grad: &[f64]) -> Result<()> {
        self.hd_update(grad)?;
        self.inner_step(params, grad)
    }
}

fn check_finite(grad: &[f64]) -> Result<()> {
    match grad.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("gradient element {i} = {}", grad[i]))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::model::Layer;

    /// A "network" whose single trainable value is the first weight; the
    /// remaining entries receive zero gradient.
    fn scalar_params(w: f64) -> InnerParams {
        InnerParams::new(vec![
            Layer { weight: Tensor::matrix(1, 1, vec![w]).unwrap(), bias: Tensor::zeros(&[1]) },
            Layer { weight: Tensor::zeros(&[1, 1]), bias: Tensor::zeros(&[1]) },
        ])
        .unwrap()
    }

    fn grad(g: f64) -> Vec<f64> {
        vec![g, 0.0, 0.0, 0.0]
    }

    fn first(p: &InnerParams) -> f64 {
        *p.values().next().unwrap()
    }

    #[test]
    fn sgd_one_step() {
        let mut p = scalar_params(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, 0.0).unwrap();
        opt.inner_step(&mut p, &grad(2.0)).unwrap();
        assert!((first(&p) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        let mut p = scalar_params(0.0);
        let mut opt = OptimizerState::new(OptimizerKind::Momentum, 0.1, 0.0).unwrap();
        opt.inner_step(&mut p, &grad(1.0)).unwrap();
        assert!((first(&p) + 0.1).abs() < 1e-15);
        opt.inner_step(&mut p, &grad(1.0)).unwrap();
        assert!((first(&p) + 0.1 + 0.19).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        for g in [1e-3, 1.0, 1e4] {
            let mut p = scalar_params(0.0);
            let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01, 0.0).unwrap();
            opt.inner_step(&mut p, &grad(g)).unwrap();
            assert!((first(&p).abs() - 0.01).abs() < 1e-6, "g={g}: {}", first(&p));
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = scalar_params(0.0);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, 0.0).unwrap();
        let err = opt.inner_step(&mut p, &grad(f64::NAN)).unwrap_err();
        assert_eq!(err.class(), crate::ErrorClass::Numeric);
        assert!(opt.inner_step(&mut p, &[1.0]).is_err());
    }

    #[test]
    fn hd_aligned_unit_gradients_double_the_rate() {
        let mut opt = OptimizerState::new(OptimizerKind::SgdHd, 0.1, 0.1).unwrap();
        opt.hd_update(&[1.0, 0.0]).unwrap();
        assert_eq!(opt.lr(), 0.1);
        opt.hd_update(&[1.0, 0.0]).unwrap();
        assert!((opt.lr() - 0.2).abs() < 1e-15);
        assert_eq!(opt.prev_grad().unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn hd_orthogonal_gradients_keep_the_rate() {
        let mut opt = OptimizerState::new(OptimizerKind::AdamHd, 0.1, 0.5).unwrap();
        opt.hd_update(&[1.0, 0.0]).unwrap();
        opt.hd_update(&[0.0, 3.0]).unwrap();
        assert_eq!(opt.lr(), 0.1);
    }

    #[test]
    fn hd_with_zero_step_never_moves() {
        let mut opt = OptimizerState::new(OptimizerKind::SgdHd, 0.1, 0.0).unwrap();
        for k in 0..50 {
            opt.hd_update(&[k as f64, 1.0 - k as f64]).unwrap();
        }
        assert_eq!(opt.lr(), 0.1);
    }

    #[test]
    fn hd_anti_correlated_gradients_decay_to_the_clamp() {
        let mut opt = OptimizerState::new(OptimizerKind::SgdHd, 0.1, 0.01).unwrap();
        let mut last = opt.lr();
        opt.hd_update(&[1.0, 1.0]).unwrap();
        for k in 0..200 {
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            opt.hd_update(&[sign, sign]).unwrap();
            if last > LR_MIN {
                assert!(opt.lr() < last);
            } else {
                assert_eq!(opt.lr(), LR_MIN);
            }
            last = opt.lr();
        }
        assert_eq!(opt.lr(), LR_MIN);
    }

    #[test]
    fn non_hd_kinds_ignore_hd_update() {
        let mut opt = OptimizerState::new(OptimizerKind::Momentum, 0.1, 0.5).unwrap();
        opt.hd_update(&[1.0]).unwrap();
        opt.hd_update(&[1.0]).unwrap();
        assert_eq!(opt.lr(), 0.1);
        assert!(opt.prev_grad().is_none());
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("adamhd".parse::<OptimizerKind>().unwrap(), OptimizerKind::AdamHd);
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
