use ndarray::Array2;
use proptest::prelude::*;

use mtsci::dataset::{fit_normalizer, make_windows, pair_with_context, SeriesTable, Window};
use mtsci::metrics::{
    crps_from_quantiles, crps_quantile, default_quantile_levels, linear_interp_baseline,
    mean_baseline, point_scores,
};
use mtsci::synthetic::SineMixture;

fn finite_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-100.0f64..100.0, n)
}

fn series(steps: usize, seed: u64) -> SeriesTable {
    SineMixture {
        steps,
        features: 2,
        ..Default::default()
    }
    .generate(seed)
    .unwrap()
}

proptest! {
    #[test]
    fn mae_bounded_by_rmse(pairs in (1usize..50).prop_flat_map(|n| (finite_vec(n), finite_vec(n)))) {
        let (t, e) = pairs;
        let s = point_scores(&t, &e, 1e-4).unwrap();
        prop_assert!(s.mae >= 0.0);
        prop_assert!(s.mae <= s.rmse + 1e-9);
        prop_assert_eq!(s.n_cells, t.len());
        let perfect = point_scores(&t, &t, 1e-4).unwrap();
        prop_assert_eq!(perfect.mae, 0.0);
        prop_assert_eq!(perfect.rmse, 0.0);
    }

    #[test]
    fn crps_nonnegative_and_zero_for_exact_quantiles(
        truth in proptest::collection::vec(0.5f64..10.0, 1..30),
        spread in 0.0f64..3.0,
    ) {
        let levels = default_quantile_levels();
        let exact: Vec<Vec<f64>> = levels.iter().map(|_| truth.clone()).collect();
        prop_assert_eq!(crps_from_quantiles(&truth, &exact, &levels).unwrap(), Some(0.0));
        let widened: Vec<Vec<f64>> = levels
            .iter()
            .map(|&q| truth.iter().map(|t| t + spread * (q - 0.5)).collect())
            .collect();
        let c = crps_from_quantiles(&truth, &widened, &levels).unwrap().unwrap();
        prop_assert!(c >= 0.0);
    }

    #[test]
    fn crps_of_constant_samples_matches_normalized_mae(
        pairs in (1usize..20).prop_flat_map(|n| (
            proptest::collection::vec(0.5f64..5.0, n),
            proptest::collection::vec(-5.0f64..5.0, n),
        )),
    ) {
        // Degenerate predictive distributions: every quantile pinball term sums
        // to |x - t| over symmetric levels, so CRPS equals MAE / mean|t|.
        let (truth, est) = pairs;
        let samples: Vec<Vec<f64>> = est.iter().map(|&e| vec![e, e]).collect();
        let levels = [0.25, 0.5, 0.75];
        let c = crps_quantile(&truth, &samples, &levels).unwrap().unwrap();
        let mae = truth.iter().zip(&est).map(|(t, e)| (t - e).abs()).sum::<f64>() / truth.len() as f64;
        let scale = truth.iter().sum::<f64>() / truth.len() as f64;
        prop_assert!((c - mae / scale).abs() < 1e-9, "{} vs {}", c, mae / scale);
    }

    #[test]
    fn normalization_round_trips(steps in 30usize..200, seed in any::<u64>()) {
        let s = series(steps, seed);
        let norm = fit_normalizer(&s).unwrap();
        let z = norm.apply(&s);
        for j in 0..2 {
            let col = z.values.column(j);
            let mean = col.sum() / steps as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / steps as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
        let back = norm.invert(&z.values);
        for (a, b) in back.iter().zip(s.values.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn window_count_and_context_pairs(steps in 10usize..300, len in 2usize..24, stride in 1usize..30) {
        let s = series(steps, 1);
        let w = make_windows(&s, len, stride).unwrap();
        let want = if steps < len { 0 } else { (steps - len) / stride + 1 };
        prop_assert_eq!(w.len(), want);
        for win in &w {
            prop_assert_eq!(win.values.dim(), (len, 2));
        }
        let pairs = pair_with_context(&w);
        for p in &pairs {
            if let Some(ctx) = &p.context {
                prop_assert_eq!(ctx.start_index, p.sampled.start_index + len);
            }
        }
        if stride != len {
            prop_assert!(pairs.iter().all(|p| !p.has_context()));
        } else if w.len() > 1 {
            prop_assert_eq!(pairs.iter().filter(|p| p.has_context()).count(), w.len() - 1);
        }
    }

    #[test]
    fn baselines_copy_conditioning_cells(
        vals in proptest::collection::vec(-3.0f64..3.0, 24),
        obs in proptest::collection::vec(any::<bool>(), 24),
    ) {
        let values = Array2::from_shape_vec((8, 3), vals).unwrap();
        let obs_mask = Array2::from_shape_vec((8, 3), obs).unwrap();
        let w = Window {
            values: &values * &obs_mask.mapv(f64::from),
            obs_mask: obs_mask.clone(),
            eval_mask: Array2::from_elem((8, 3), false),
            start_index: 0,
        };
        let means = [0.1, -0.2, 0.3];
        let m = mean_baseline(&w, &means);
        let li = linear_interp_baseline(&w, &means);
        for ((t, j), &o) in obs_mask.indexed_iter() {
            if o {
                prop_assert_eq!(m[[t, j]], w.values[[t, j]]);
                prop_assert_eq!(li[[t, j]], w.values[[t, j]]);
            } else {
                prop_assert_eq!(m[[t, j]], means[j]);
                // interpolation stays inside the range of the feature's observations
                let col: Vec<f64> = (0..8).filter(|&s| obs_mask[[s, j]]).map(|s| w.values[[s, j]]).collect();
                if col.is_empty() {
                    prop_assert_eq!(li[[t, j]], means[j]);
                } else {
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(li[[t, j]] >= lo - 1e-12 && li[[t, j]] <= hi + 1e-12);
                }
            }
        }
    }
}
