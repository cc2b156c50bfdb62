//! Ancestral sampling of missing values.

use ndarray::{s, Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{NormStats, Window};
use crate::denoiser::{ConditionSource, Denoiser, DenoiserBatch};
use crate::diffusion::DiffusionSchedule;
use crate::rng::{derive_seed, rng_from_seed};
use crate::training::Objective;
use crate::{Error, Real, Result};

/// Quantile levels written next to every point estimate.
pub const REPORT_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

const SAMPLE_STREAM: u64 = 0x53_41_4d_50;

/// Anything that predicts the reverse-process target for a batch of windows.
///
/// All matrices are `(B * L, C)` with window `b` in rows `b*L .. (b+1)*L`.
pub trait NoisePredictor: Sync {
    fn window_len(&self) -> usize;

    fn predict(
        &self,
        noisy: &Array2<f64>,
        steps: &[usize],
        sampled_co: &Array2<f64>,
        cond_mask: &Array2<f64>,
    ) -> Result<Array2<f64>>;
}

impl<F: Real> NoisePredictor for Denoiser<F> {
    fn window_len(&self) -> usize {
        self.config().window
    }

    fn predict(
        &self,
        noisy: &Array2<f64>,
        steps: &[usize],
        sampled_co: &Array2<f64>,
        cond_mask: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        let batch = DenoiserBatch {
            noisy: noisy.mapv(F::from_f64_lossy),
            steps: steps.to_vec(),
            condition: ConditionSource::observed_only(
                sampled_co.mapv(F::from_f64_lossy),
                cond_mask.mapv(F::from_f64_lossy),
            ),
        };
        let (eps, _) = Denoiser::predict(self, &batch)?;
        Ok(eps.mapv(F::as_f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Samples per window.
    pub samples: usize,
    pub seed: u64,
    /// Windows sampled together in one network batch.
    pub batch_windows: usize,
    pub objective: Objective,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            seed: 0,
            batch_windows: 4,
            objective: Objective::PredictNoise,
        }
    }
}

/// Generated samples for one window, in data units.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    pub start_index: usize,
    /// One `(L, C)` matrix per successful sample.
    pub samples: Vec<Array2<f64>>,
    /// Per-cell median over samples.
    pub point_estimate: Array2<f64>,
    /// Cells that were imputed.
    pub target_mask: Array2<bool>,
}

impl ImputationResult {
    /// Empirical per-cell quantile with linear interpolation between order
    /// statistics.
    pub fn quantile(&self, q: f64) -> Array2<f64> {
        cell_quantile(&self.samples, q)
    }
}

/// Linear-interpolation quantile of an unsorted slice.
pub fn empirical_quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] + (values[hi] - values[lo]) * frac
}

fn cell_quantile(samples: &[Array2<f64>], q: f64) -> Array2<f64> {
    let dim = samples[0].dim();
    let mut buf = vec![0.0; samples.len()];
    Array2::from_shape_fn(dim, |ix| {
        for (b, s) in buf.iter_mut().zip(samples) {
            *b = s[ix];
        }
        empirical_quantile(&mut buf, q)
    })
}

/// Imputes one window; see [`impute_dataset`].
pub fn impute_window<M: NoisePredictor + ?Sized>(
    model: &M,
    schedule: &DiffusionSchedule,
    window: &Window,
    stats: &NormStats,
    cfg: &SamplerConfig,
) -> Result<ImputationResult> {
    let mut out = sample_chunk(model, schedule, std::slice::from_ref(window), stats, cfg)?;
    Ok(out.remove(0))
}

/// Draws `cfg.samples` imputations for every window.
///
/// The condition is built from the window's observed, non-held-out cells
/// only. Each window's random stream is derived from the master seed and its
/// start index, so results do not depend on window order or batching.
pub fn impute_dataset<M: NoisePredictor + ?Sized>(
    model: &M,
    schedule: &DiffusionSchedule,
    windows: &[Window],
    stats: &NormStats,
    cfg: &SamplerConfig,
    mut progress: impl FnMut(usize, usize),
) -> Result<Vec<ImputationResult>> {
    if cfg.samples == 0 {
        return Err(Error::Config("infer.samples must be at least 1".into()));
    }
    let chunk = cfg.batch_windows.max(1);
    let mut results = Vec::with_capacity(windows.len());
    for ws in windows.chunks(chunk) {
        results.extend(sample_chunk(model, schedule, ws, stats, cfg)?);
        progress(results.len(), windows.len());
    }
    Ok(results)
}

/// As [`impute_dataset`], spreading window batches over the current rayon
/// pool. Results equal the sequential ones.
#[cfg(feature = "parallel")]
pub fn impute_dataset_parallel<M: NoisePredictor + ?Sized>(
    model: &M,
    schedule: &DiffusionSchedule,
    windows: &[Window],
    stats: &NormStats,
    cfg: &SamplerConfig,
) -> Result<Vec<ImputationResult>> {
    use rayon::prelude::*;
    if cfg.samples == 0 {
        return Err(Error::Config("infer.samples must be at least 1".into()));
    }
    let chunks = windows
        .par_chunks(cfg.batch_windows.max(1))
        .map(|ws| sample_chunk(model, schedule, ws, stats, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

fn sample_chunk<M: NoisePredictor + ?Sized>(
    model: &M,
    schedule: &DiffusionSchedule,
    windows: &[Window],
    stats: &NormStats,
    cfg: &SamplerConfig,
) -> Result<Vec<ImputationResult>> {
    let n_samples = cfg.samples;
    if n_samples == 0 {
        return Err(Error::Config("infer.samples must be at least 1".into()));
    }
    let l = model.window_len();
    let c = stats.num_features();
    for w in windows {
        if w.values.dim() != (l, c) {
            return Err(Error::CheckpointMismatch(format!(
                "window {} is {:?}, model expects ({l}, {c})",
                w.start_index,
                w.values.dim()
            )));
        }
    }
    let big_k = schedule.steps();
    let b = windows.len() * n_samples;
    let rows = b * l;
    let mut rngs: Vec<_> = windows
        .iter()
        .map(|w| rng_from_seed(derive_seed(cfg.seed, SAMPLE_STREAM, w.start_index as u64)))
        .collect();
    let targets: Vec<Array2<bool>> = windows.iter().map(Window::target_mask).collect();

    let mut target_f = Array2::<f64>::zeros((rows, c));
    let mut sampled_co = Array2::<f64>::zeros((rows, c));
    let mut cond_mask = Array2::<f64>::zeros((rows, c));
    for (wi, w) in windows.iter().enumerate() {
        let cm = w.cond_mask();
        for si in 0..n_samples {
            let r0 = (wi * n_samples + si) * l;
            Zip::from(target_f.slice_mut(s![r0..r0 + l, ..]))
                .and(&targets[wi])
                .for_each(|t, &m| *t = f64::from(u8::from(m)));
            Zip::from(sampled_co.slice_mut(s![r0..r0 + l, ..]))
                .and(cond_mask.slice_mut(s![r0..r0 + l, ..]))
                .and(&w.values)
                .and(&cm)
                .for_each(|co, m, &v, &o| {
                    if o {
                        *co = v;
                        *m = 1.0;
                    }
                });
        }
    }

    let mut fresh = Array2::<f64>::zeros((rows, c));
    let draw = |fresh: &mut Array2<f64>, rngs: &mut [crate::rng::Rng]| {
        for (wi, rng) in rngs.iter_mut().enumerate() {
            let r0 = wi * n_samples * l;
            for v in fresh.slice_mut(s![r0..r0 + n_samples * l, ..]).iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
    };
    draw(&mut fresh, &mut rngs);
    let mut x = &fresh * &target_f;
    let mut failed = vec![false; b];
    for k in (1..=big_k).rev() {
        let steps = vec![k; b];
        let pred = model.predict(&x, &steps, &sampled_co, &cond_mask)?;
        if k > 1 {
            draw(&mut fresh, &mut rngs);
        } else {
            fresh.fill(0.0);
        }
        let sigma = schedule.sigma(k);
        let (a, bcoef) = match cfg.objective {
            Objective::PredictNoise => {
                let (a, b) = schedule.eps_mean_coefficients(k)?;
                (a, -b)
            }
            Objective::PredictX0 => schedule.x0_mean_coefficients(k)?,
        };
        Zip::from(&mut x)
            .and(&pred)
            .and(&fresh)
            .and(&target_f)
            .for_each(|x, &p, &z, &t| *x = t * (a * *x + bcoef * p + sigma * z));
        for (bi, f) in failed.iter_mut().enumerate() {
            if !*f && x.slice(s![bi * l..(bi + 1) * l, ..]).iter().any(|v| !v.is_finite()) {
                log::warn!(
                    "sample {} of window {} diverged at step {k}",
                    bi % n_samples,
                    windows[bi / n_samples].start_index
                );
                *f = true;
            }
        }
    }

    let mut results = Vec::with_capacity(windows.len());
    for (wi, w) in windows.iter().enumerate() {
        let cm = w.cond_mask();
        let mut samples = Vec::with_capacity(n_samples);
        for si in 0..n_samples {
            let bi = wi * n_samples + si;
            if failed[bi] {
                continue;
            }
            let block = x.slice(s![bi * l..(bi + 1) * l, ..]);
            let sample = Array2::from_shape_fn((l, c), |(t, j)| {
                if cm[[t, j]] {
                    stats.invert_value(w.values[[t, j]], j)
                } else {
                    stats.invert_value(block[[t, j]], j)
                }
            });
            samples.push(sample);
        }
        if samples.is_empty() {
            return Err(Error::Sampling {
                window: w.start_index,
                message: format!("all {n_samples} samples produced non-finite values"),
            });
        }
        let point_estimate = cell_quantile(&samples, 0.5);
        results.push(ImputationResult {
            start_index: w.start_index,
            samples,
            point_estimate,
            target_mask: targets[wi].clone(),
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let mut v = vec![3.0, 1.0, 2.0, 4.0];
        assert_eq!(empirical_quantile(&mut v, 0.5), 2.5);
        assert_eq!(empirical_quantile(&mut v, 0.0), 1.0);
        assert_eq!(empirical_quantile(&mut v, 1.0), 4.0);
        assert_eq!(empirical_quantile(&mut [7.0], 0.05), 7.0);
    }

    #[test]
    fn median_ignores_sample_order() {
        let a = Array2::from_elem((1, 1), 1.0);
        let b = Array2::from_elem((1, 1), 5.0);
        let c = Array2::from_elem((1, 1), 2.0);
        let m1 = cell_quantile(&[a.clone(), b.clone(), c.clone()], 0.5);
        let m2 = cell_quantile(&[c, a, b], 0.5);
        assert_eq!(m1, m2);
        assert_eq!(m1[[0, 0]], 2.0);
    }
}
