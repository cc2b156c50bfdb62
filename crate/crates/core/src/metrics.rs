//! Point and probabilistic scores, plus trivial baselines.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Window;
use crate::sampler::empirical_quantile;
use crate::{Error, Result};

/// Cells with `|truth|` at or below this are left out of MAPE.
pub const DEFAULT_MAPE_FLOOR: f64 = 1e-4;

/// `0.05, 0.10, ..., 0.95`.
pub fn default_quantile_levels() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointScores {
    pub mae: f64,
    pub rmse: f64,
    /// Percent; `None` when every truth is below the floor.
    pub mape: Option<f64>,
    pub n_cells: usize,
    /// Cells left out of MAPE by the floor.
    pub mape_excluded: usize,
}

/// MAE, RMSE and MAPE over paired truth/estimate values.
pub fn point_scores(truth: &[f64], estimate: &[f64], mape_floor: f64) -> Result<PointScores> {
    if truth.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "{} truths vs {} estimates",
            truth.len(),
            estimate.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Validation("no target cells to score".into()));
    }
    let n = truth.len() as f64;
    let (mut abs, mut sq, mut pct, mut pct_n) = (0.0, 0.0, 0.0, 0usize);
    for (&t, &e) in truth.iter().zip(estimate) {
        let err = e - t;
        abs += err.abs();
        sq += err * err;
        if t.abs() > mape_floor {
            pct += err.abs() / t.abs();
            pct_n += 1;
        }
    }
    Ok(PointScores {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        mape: (pct_n > 0).then(|| 100.0 * pct / pct_n as f64),
        n_cells: truth.len(),
        mape_excluded: truth.len() - pct_n,
    })
}

/// Masked variant of [`point_scores`] over matrices.
pub fn point_scores_masked(
    truth: &Array2<f64>,
    estimate: &Array2<f64>,
    mask: &Array2<bool>,
    mape_floor: f64,
) -> Result<PointScores> {
    let (t, e) = masked_pairs(truth, estimate, mask)?;
    point_scores(&t, &e, mape_floor)
}

fn masked_pairs(
    truth: &Array2<f64>,
    estimate: &Array2<f64>,
    mask: &Array2<bool>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if truth.dim() != estimate.dim() || truth.dim() != mask.dim() {
        return Err(Error::Shape(format!(
            "truth {:?}, estimate {:?}, mask {:?}",
            truth.dim(),
            estimate.dim(),
            mask.dim()
        )));
    }
    let mut t = Vec::new();
    let mut e = Vec::new();
    for ((&tv, &ev), &m) in truth.iter().zip(estimate).zip(mask) {
        if m {
            t.push(tv);
            e.push(ev);
        }
    }
    Ok((t, e))
}

/// Normalized quantile CRPS from per-level predicted quantiles.
///
/// `quantiles[i][cell]` is the level-`levels[i]` quantile for `truth[cell]`.
/// The pinball loss `2 (1[truth < x_q] - q)(x_q - truth)` is averaged over
/// cells and levels and divided by the mean absolute truth. Returns `None`
/// when every truth is zero.
pub fn crps_from_quantiles(
    truth: &[f64],
    quantiles: &[Vec<f64>],
    levels: &[f64],
) -> Result<Option<f64>> {
    if quantiles.len() != levels.len() || levels.is_empty() {
        return Err(Error::Shape(format!(
            "{} quantile rows for {} levels",
            quantiles.len(),
            levels.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Validation("no target cells to score".into()));
    }
    let mut loss = 0.0;
    for (row, &q) in quantiles.iter().zip(levels) {
        if row.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} quantiles vs {} truths",
                row.len(),
                truth.len()
            )));
        }
        for (&x, &t) in row.iter().zip(truth) {
            let ind = if t < x { 1.0 } else { 0.0 };
            loss += 2.0 * (ind - q) * (x - t);
        }
    }
    let n = truth.len() as f64;
    let mean_loss = loss / (n * levels.len() as f64);
    let scale = truth.iter().map(|t| t.abs()).sum::<f64>() / n;
    Ok((scale > 0.0).then(|| mean_loss / scale))
}

/// Normalized quantile CRPS from raw samples; `samples[cell]` holds every
/// sample drawn for that cell.
pub fn crps_quantile(truth: &[f64], samples: &[Vec<f64>], levels: &[f64]) -> Result<Option<f64>> {
    if samples.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} sample sets for {} truths",
            samples.len(),
            truth.len()
        )));
    }
    if let Some(few) = samples.iter().find(|s| s.len() < 2) {
        return Err(Error::Validation(format!(
            "CRPS needs at least 2 samples per cell, got {}",
            few.len()
        )));
    }
    let mut buf = Vec::new();
    let quantiles: Vec<Vec<f64>> = levels
        .iter()
        .map(|&q| {
            samples
                .iter()
                .map(|s| {
                    buf.clear();
                    buf.extend_from_slice(s);
                    empirical_quantile(&mut buf, q)
                })
                .collect()
        })
        .collect();
    crps_from_quantiles(truth, &quantiles, levels)
}

/// Scores of one method on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub dataset: String,
    pub pattern: String,
    pub seed: u64,
    pub method: String,
    pub mae: f64,
    pub rmse: f64,
    pub mape: Option<f64>,
    pub crps: Option<f64>,
    pub n_cells: usize,
    pub mape_excluded: usize,
}

impl ScoreReport {
    pub fn new(
        labels: [&str; 3],
        seed: u64,
        points: PointScores,
        crps: Option<f64>,
    ) -> Self {
        let [dataset, pattern, method] = labels;
        Self {
            dataset: dataset.into(),
            pattern: pattern.into(),
            seed,
            method: method.into(),
            mae: points.mae,
            rmse: points.rmse,
            mape: points.mape,
            crps,
            n_cells: points.n_cells,
            mape_excluded: points.mape_excluded,
        }
    }
}

/// Fills every non-conditioning cell with the per-feature `means`;
/// conditioning cells keep their values.
pub fn mean_baseline(window: &Window, means: &[f64]) -> Array2<f64> {
    let cond = window.cond_mask();
    Array2::from_shape_fn(window.values.dim(), |(t, j)| {
        if cond[[t, j]] {
            window.values[[t, j]]
        } else {
            means[j]
        }
    })
}

/// Per-feature linear interpolation over time between conditioning cells,
/// holding the nearest value past the ends. Features with no conditioning
/// cell use `fallback`.
pub fn linear_interp_baseline(window: &Window, fallback: &[f64]) -> Array2<f64> {
    let cond = window.cond_mask();
    let (l, c) = window.values.dim();
    let mut out = window.values.clone();
    for j in 0..c {
        let known: Vec<usize> = (0..l).filter(|&t| cond[[t, j]]).collect();
        for t in 0..l {
            if cond[[t, j]] {
                continue;
            }
            out[[t, j]] = match known.binary_search(&t) {
                _ if known.is_empty() => fallback[j],
                Ok(_) => unreachable!("conditioning cells are skipped"),
                Err(0) => window.values[[known[0], j]],
                Err(i) if i == known.len() => window.values[[known[i - 1], j]],
                Err(i) => {
                    let (a, b) = (known[i - 1], known[i]);
                    let (va, vb) = (window.values[[a, j]], window.values[[b, j]]);
                    va + (vb - va) * (t - a) as f64 / (b - a) as f64
                }
            };
        }
    }
    out
}
