//! Noise schedule, closed-form forward noising and the ancestral reverse step.
//!
//! Steps are 1-based throughout: `k` runs over `1..=K`.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleShape {
    Linear,
    #[default]
    Quadratic,
}

/// Per-step noise levels with their cumulative products and posterior
/// standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl DiffusionSchedule {
    /// Interpolates `K` noise levels between `beta_1` and `beta_k`.
    pub fn build(steps: usize, beta_1: f64, beta_k: f64, shape: ScheduleShape) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion.K must be at least 1".into()));
        }
        if !(beta_1 > 0.0 && beta_1 <= beta_k && beta_k < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < diffusion.beta_1 <= diffusion.beta_K < 1, got {beta_1} and {beta_k}"
            )));
        }
        let beta = (0..steps)
            .map(|i| {
                let frac = if steps == 1 {
                    0.0
                } else {
                    i as f64 / (steps - 1) as f64
                };
                match shape {
                    ScheduleShape::Linear => beta_1 + frac * (beta_k - beta_1),
                    ScheduleShape::Quadratic => {
                        let r = beta_1.sqrt() + frac * (beta_k.sqrt() - beta_1.sqrt());
                        r * r
                    }
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    /// Schedule from explicit noise levels, each in `(0, 1)`.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config("empty noise schedule".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("noise level {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar: Vec<f64> = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let sigma = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])).sqrt()
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn idx(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.steps() {
            Err(Error::StepOutOfRange {
                k,
                max: self.steps(),
            })
        } else {
            Ok(k - 1)
        }
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha[k - 1]
    }

    /// Cumulative product up to `k`; `alpha_bar(0)` is 1.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bar[k - 1]
        }
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.sigma[k - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// `(sqrt(alpha_bar_k), sqrt(1 - alpha_bar_k))`.
    pub fn noise_coefficients(&self, k: usize) -> Result<(f64, f64)> {
        let i = self.idx(k)?;
        Ok((self.alpha_bar[i].sqrt(), (1.0 - self.alpha_bar[i]).sqrt()))
    }

    /// Coefficients `(a, b)` of the noise-prediction mean `a x_k - b eps`.
    pub fn eps_mean_coefficients(&self, k: usize) -> Result<(f64, f64)> {
        let i = self.idx(k)?;
        let sa = self.alpha[i].sqrt();
        Ok((
            1.0 / sa,
            (1.0 - self.alpha[i]) / ((1.0 - self.alpha_bar[i]).sqrt() * sa),
        ))
    }

    /// Coefficients `(a, b)` of the data-prediction mean `a x_k + b x0_hat`.
    pub fn x0_mean_coefficients(&self, k: usize) -> Result<(f64, f64)> {
        let i = self.idx(k)?;
        let prev = self.alpha_bar(k - 1);
        let denom = 1.0 - self.alpha_bar[i];
        Ok((
            self.alpha[i].sqrt() * (1.0 - prev) / denom,
            prev.sqrt() * self.beta[i] / denom,
        ))
    }
}

/// A noised target matrix and the draw that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedTarget {
    pub x_k: Array2<f64>,
    pub k: usize,
    pub eps: Array2<f64>,
}

/// `x_k = sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) eps`.
pub fn noise_targets(
    x0: &Array2<f64>,
    k: usize,
    eps: &Array2<f64>,
    schedule: &DiffusionSchedule,
) -> Result<NoisedTarget> {
    if x0.dim() != eps.dim() {
        return Err(Error::Shape(format!(
            "targets {:?} vs noise {:?}",
            x0.dim(),
            eps.dim()
        )));
    }
    let (a, b) = schedule.noise_coefficients(k)?;
    let x_k = Zip::from(x0).and(eps).map_collect(|&x, &e| a * x + b * e);
    Ok(NoisedTarget {
        x_k,
        k,
        eps: eps.clone(),
    })
}

/// One ancestral step from `x_k` given predicted noise.
///
/// `fresh_eps` should be zero at `k = 1`.
pub fn reverse_step(
    x_k: &Array2<f64>,
    predicted_eps: &Array2<f64>,
    k: usize,
    schedule: &DiffusionSchedule,
    fresh_eps: &Array2<f64>,
) -> Result<Array2<f64>> {
    same_shape(x_k, predicted_eps)?;
    same_shape(x_k, fresh_eps)?;
    let (a, b) = schedule.eps_mean_coefficients(k)?;
    let s = schedule.sigma(k);
    Ok(Zip::from(x_k)
        .and(predicted_eps)
        .and(fresh_eps)
        .map_collect(|&x, &e, &z| a * x - b * e + s * z))
}

/// One ancestral step from `x_k` given a predicted clean signal.
pub fn reverse_step_x0(
    x_k: &Array2<f64>,
    predicted_x0: &Array2<f64>,
    k: usize,
    schedule: &DiffusionSchedule,
    fresh_eps: &Array2<f64>,
) -> Result<Array2<f64>> {
    same_shape(x_k, predicted_x0)?;
    same_shape(x_k, fresh_eps)?;
    let (a, b) = schedule.x0_mean_coefficients(k)?;
    let s = schedule.sigma(k);
    Ok(Zip::from(x_k)
        .and(predicted_x0)
        .and(fresh_eps)
        .map_collect(|&x, &p, &z| a * x + b * p + s * z))
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())))
    }
}
