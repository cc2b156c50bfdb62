//! Browser bindings: noise schedules, missing-pattern simulation with the
//! simple baselines, and forward noising of a window.
//!
//! Every export returns a JSON string for the page script to parse.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use mtsci::dataset::{make_windows, simulate_missing, MissingPattern, Window};
use mtsci::diffusion::{noise_targets, DiffusionSchedule, ScheduleShape};
use mtsci::metrics::{linear_interp_baseline, mean_baseline};
use mtsci::rng::rng_from_seed;
use mtsci::synthetic::SineMixture;

const WINDOW: usize = 24;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn shape(name: &str) -> Result<ScheduleShape, JsError> {
    match name {
        "linear" => Ok(ScheduleShape::Linear),
        "quadratic" => Ok(ScheduleShape::Quadratic),
        other => Err(JsError::new(&format!("unknown schedule shape {other:?}"))),
    }
}

fn to_json(v: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js_err)
}

/// Column-major rows for plotting: one vector per feature.
fn columns(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.columns().into_iter().map(|c| c.to_vec()).collect()
}

fn mask_columns(a: &Array2<bool>) -> Vec<Vec<bool>> {
    a.columns().into_iter().map(|c| c.to_vec()).collect()
}

#[derive(Serialize)]
struct Curves {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

/// Per-step `beta`, `alpha_bar` and posterior sigma.
#[wasm_bindgen]
pub fn schedule_curves(steps: usize, beta_1: f64, beta_k: f64, kind: &str) -> Result<String, JsError> {
    let s = DiffusionSchedule::build(steps, beta_1, beta_k, shape(kind)?).map_err(js_err)?;
    to_json(&Curves {
        betas: s.betas().to_vec(),
        alpha_bars: s.alpha_bars().to_vec(),
        sigmas: s.sigmas().to_vec(),
    })
}

#[derive(Serialize)]
struct MissingDemo {
    truth: Vec<Vec<f64>>,
    held_out: Vec<Vec<bool>>,
    mean: Vec<Vec<f64>>,
    linear: Vec<Vec<f64>>,
    held_out_cells: usize,
    mae_mean: Option<f64>,
    mae_linear: Option<f64>,
}

fn one_window(features: usize, seed: u64) -> Result<(Window, Vec<f64>), JsError> {
    let gen = SineMixture {
        steps: WINDOW * 4,
        features,
        ..Default::default()
    };
    let series = gen.generate(seed).map_err(js_err)?;
    let means = series
        .values
        .columns()
        .into_iter()
        .map(|c| c.mean().unwrap_or(0.0))
        .collect();
    let windows = make_windows(&series, WINDOW, WINDOW).map_err(js_err)?;
    let w = windows.into_iter().next().ok_or_else(|| JsError::new("no window"))?;
    Ok((w, means))
}

fn mae(truth: &Array2<f64>, est: &Array2<f64>, mask: &Array2<bool>) -> Option<f64> {
    let (sum, n) = ndarray::Zip::from(truth)
        .and(est)
        .and(mask)
        .fold((0.0, 0usize), |(s, n), &t, &e, &m| {
            if m {
                (s + (t - e).abs(), n + 1)
            } else {
                (s, n)
            }
        });
    (n > 0).then(|| sum / n as f64)
}

/// Hides cells of a synthetic window with the point (`ratio`) or block
/// pattern and fills them with the mean and linear-interpolation baselines.
#[wasm_bindgen]
pub fn simulate_window(features: usize, pattern: &str, ratio: f64, seed: u64) -> Result<String, JsError> {
    let pattern = match pattern {
        "point" => MissingPattern::Point { ratio },
        "block" => MissingPattern::Block {
            base_ratio: ratio,
            start_prob: 0.05,
            min_len: WINDOW / 4,
            max_len: WINDOW / 2,
        },
        other => return Err(JsError::new(&format!("unknown pattern {other:?}"))),
    };
    let (w, means) = one_window(features.max(1), seed)?;
    let w = simulate_missing(&[w], &pattern, seed.wrapping_add(1))
        .map_err(js_err)?
        .remove(0);
    let mean = mean_baseline(&w, &means);
    let linear = linear_interp_baseline(&w, &means);
    to_json(&MissingDemo {
        truth: columns(&w.values),
        held_out: mask_columns(&w.eval_mask),
        held_out_cells: w.eval_mask.iter().filter(|&&m| m).count(),
        mae_mean: mae(&w.values, &mean, &w.eval_mask),
        mae_linear: mae(&w.values, &linear, &w.eval_mask),
        mean: columns(&mean),
        linear: columns(&linear),
    })
}

#[derive(Serialize)]
struct Noised {
    clean: Vec<f64>,
    noised: Vec<f64>,
    signal_scale: f64,
    noise_scale: f64,
}

/// Noises the first feature of a synthetic window to step `k` of a
/// quadratic schedule with `steps` steps.
#[wasm_bindgen]
pub fn noise_window(steps: usize, beta_k: f64, k: usize, seed: u64) -> Result<String, JsError> {
    let s = DiffusionSchedule::build(steps, 1e-4, beta_k, ScheduleShape::Quadratic).map_err(js_err)?;
    let (w, _) = one_window(1, seed)?;
    let mut rng = rng_from_seed(seed.wrapping_add(2));
    let eps = Array2::from_shape_simple_fn(w.values.dim(), || rng.sample(StandardNormal));
    let nt = noise_targets(&w.values, k, &eps, &s).map_err(js_err)?;
    let (a, b) = s.noise_coefficients(k).map_err(js_err)?;
    to_json(&Noised {
        clean: w.values.column(0).to_vec(),
        noised: nt.x_k.column(0).to_vec(),
        signal_scale: a,
        noise_scale: b,
    })
}
