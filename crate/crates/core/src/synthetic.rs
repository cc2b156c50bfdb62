//! Synthetic series: noisy mixtures of shared sinusoids.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::SeriesTable;
use crate::rng::rng_from_seed;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineMixture {
    pub steps: usize,
    pub features: usize,
    /// Latent sinusoids shared by all features.
    pub components: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    /// Period range in steps.
    pub min_period: f64,
    pub max_period: f64,
}

impl Default for SineMixture {
    fn default() -> Self {
        Self {
            steps: 48_000,
            features: 5,
            components: 3,
            noise: 0.1,
            min_period: 6.0,
            max_period: 30.0,
        }
    }
}

fn hourly(steps: usize) -> Vec<NaiveDateTime> {
    let start = NaiveDate::from_ymd_opt(2020, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date");
    (0..steps)
        .map(|i| start + Duration::hours(i as i64))
        .collect()
}

fn names(c: usize) -> Vec<String> {
    (0..c).map(|j| format!("f{j}")).collect()
}

impl SineMixture {
    /// Each feature is an offset plus a random linear combination of the
    /// latent sinusoids plus noise; every cell is observed.
    pub fn generate(&self, seed: u64) -> Result<SeriesTable> {
        let mut rng = rng_from_seed(seed);
        let m = self.components.max(1);
        let periods: Vec<f64> = (0..m)
            .map(|_| rng.random_range(self.min_period..=self.max_period))
            .collect();
        let phases: Vec<f64> = (0..m)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let scale = 1.0 / (m as f64).sqrt();
        let loadings = Array2::from_shape_simple_fn((self.features, m), || {
            scale * rng.sample::<f64, _>(StandardNormal)
        });
        let offsets: Vec<f64> = (0..self.features)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut values = Array2::zeros((self.steps, self.features));
        for t in 0..self.steps {
            let latent: Vec<f64> = (0..m)
                .map(|i| (std::f64::consts::TAU * t as f64 / periods[i] + phases[i]).sin())
                .collect();
            for j in 0..self.features {
                let signal: f64 = (0..m).map(|i| loadings[[j, i]] * latent[i]).sum();
                let eps: f64 = rng.sample(StandardNormal);
                values[[t, j]] = offsets[j] + signal + self.noise * eps;
            }
        }
        SeriesTable::new(
            values,
            Array2::from_elem((self.steps, self.features), true),
            hourly(self.steps),
            names(self.features),
        )
    }
}

/// A fully observed series holding `value` everywhere.
pub fn constant_series(steps: usize, features: usize, value: f64) -> Result<SeriesTable> {
    SeriesTable::new(
        Array2::from_elem((steps, features), value),
        Array2::from_elem((steps, features), true),
        hourly(steps),
        names(features),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let g = SineMixture {
            steps: 100,
            ..Default::default()
        };
        let a = g.generate(4).unwrap();
        let b = g.generate(4).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.values.dim(), (100, 5));
        assert_ne!(a.values, g.generate(5).unwrap().values);
    }
}
