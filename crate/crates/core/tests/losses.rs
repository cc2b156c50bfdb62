use std::time::Instant;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng;

use mtsci::dataset::{pair_with_context, Window};
use mtsci::denoiser::{Denoiser, DenoiserConfig};
use mtsci::diffusion::{DiffusionSchedule, ScheduleShape};
use mtsci::masking::MaskStrategy;
use mtsci::rng::rng_from_seed;
use mtsci::training::{
    batch_step, denoising_loss, denoising_loss_with_grad, intra_contrastive_loss,
    intra_contrastive_loss_with_grad, Reduction, TrainConfig,
};

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(lo..hi, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn mask(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(any::<bool>(), rows * cols).prop_map(move |v| {
        Array2::from_shape_vec((rows, cols), v.into_iter().map(f64::from).collect()).unwrap()
    })
}

#[test]
fn hand_values() {
    let start = Instant::now();
    let t = array![[1.0, -2.0]];
    let p = array![[0.0, 0.0]];
    let m = array![[1.0, 1.0]];
    assert_eq!(denoising_loss(&t, &p, &m, Reduction::Mean), 2.5);

    let z = array![[0.2, -0.4, 1.5]];
    assert_eq!(intra_contrastive_loss(&z, &(&z * 2.0), 0.1), 0.0);

    let z = array![[1.0, 0.0], [0.0, 1.0]];
    let got = intra_contrastive_loss(&z, &z, 1.0);
    assert!((got - 0.551445).abs() < 1e-6, "{got}");
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn contrastive_prefers_aligned_partners() {
    let z1 = array![[1.0, 0.0], [0.0, 1.0]];
    let aligned = intra_contrastive_loss(&z1, &z1, 0.5);
    let swapped = intra_contrastive_loss(&z1, &array![[0.0, 1.0], [1.0, 0.0]], 0.5);
    assert!(aligned < swapped);
}

#[test]
fn zero_embedding_does_not_blow_up() {
    let z1 = Array2::<f64>::zeros((3, 4));
    let z2 = array![[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 1.0]];
    let (l, g1, g2) = intra_contrastive_loss_with_grad(&z1, &z2, 0.1);
    assert!(l.is_finite());
    assert!(g1.iter().chain(g2.iter()).all(|v| v.is_finite()));
}

fn tiny_model() -> Denoiser<f64> {
    let cfg = DenoiserConfig {
        window: 6,
        features: 3,
        hidden: 8,
        layers: 1,
        heads: 2,
        ff_dim: 8,
        ..Default::default()
    };
    Denoiser::new(cfg, 4).unwrap()
}

fn windows(seed: u64, n: usize) -> Vec<Window> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|i| {
            let values = Array2::from_shape_simple_fn((6, 3), || rng.random_range(-2.0..2.0));
            let obs = Array2::from_shape_simple_fn((6, 3), || rng.random_bool(0.9));
            let eval = Array2::from_shape_fn((6, 3), |ix| obs[ix] && rng.random_bool(0.3));
            Window {
                values,
                obs_mask: obs,
                eval_mask: eval,
                start_index: i * 6,
            }
        })
        .collect()
}

/// Values at held-out and unobserved cells are neither targets nor
/// conditions: changing them leaves the loss and every gradient untouched.
#[test]
fn batch_loss_ignores_non_target_cells() {
    let model = tiny_model();
    let schedule = DiffusionSchedule::build(10, 1e-4, 0.2, ScheduleShape::Quadratic).unwrap();
    let cfg = TrainConfig::default();
    let ws = windows(1, 4);
    let mut perturbed = ws.clone();
    for w in &mut perturbed {
        let hidden = w.cond_mask().mapv(|u| !u);
        for (ix, h) in hidden.indexed_iter() {
            if *h {
                w.values[ix] += 1e3;
            }
        }
    }
    let run = |ws: &[Window]| {
        let pairs = pair_with_context(ws);
        let refs: Vec<_> = pairs.iter().collect();
        let mut rng = rng_from_seed(9);
        batch_step(&model, &schedule, &refs, &cfg, &MaskStrategy::point(), &mut rng, None)
            .unwrap()
            .0
    };
    let a = run(&ws);
    let b = run(&perturbed);
    assert_eq!(a.total, b.total);
    assert_eq!(a.denoise, b.denoise);
    assert_eq!(a.contrastive, b.contrastive);
    assert_eq!(a.grads, b.grads);
}

proptest! {
    #[test]
    fn non_target_perturbation_has_zero_gradient(
        t in matrix(5, 3, -3.0, 3.0),
        p in matrix(5, 3, -3.0, 3.0),
        noise in matrix(5, 3, -50.0, 50.0),
        m in mask(5, 3),
    ) {
        let off = m.mapv(|v| 1.0 - v);
        let q = &p + &(&noise * &off);
        for reduction in [Reduction::Mean, Reduction::Sum] {
            let (a, ga) = denoising_loss_with_grad(&t, &p, &m, reduction);
            let (b, gb) = denoising_loss_with_grad(&t, &q, &m, reduction);
            prop_assert_eq!(a, b);
            prop_assert_eq!(&ga, &gb);
            for (g, &o) in ga.iter().zip(off.iter()) {
                if o > 0.0 {
                    prop_assert_eq!(*g, 0.0);
                }
            }
        }
    }

    #[test]
    fn denoising_loss_nonnegative_and_zero_at_truth(
        t in matrix(4, 4, -3.0, 3.0),
        p in matrix(4, 4, -3.0, 3.0),
        m in mask(4, 4),
    ) {
        prop_assert!(denoising_loss(&t, &p, &m, Reduction::Mean) >= 0.0);
        prop_assert_eq!(denoising_loss(&t, &t, &m, Reduction::Mean), 0.0);
    }

    #[test]
    fn contrastive_scale_invariance(
        z1 in matrix(4, 5, -2.0, 2.0),
        z2 in matrix(4, 5, -2.0, 2.0),
        s1 in 0.1f64..50.0,
        s2 in 0.1f64..50.0,
        tau in 0.05f64..1.0,
    ) {
        prop_assume!(z1.rows().into_iter().chain(z2.rows()).all(|r| r.dot(&r) > 1e-3));
        let a = intra_contrastive_loss(&z1, &z2, tau);
        let b = intra_contrastive_loss(&(&z1 * s1), &(&z2 * s2), tau);
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn contrastive_symmetric_in_view_order(
        z1 in matrix(3, 4, -2.0, 2.0),
        z2 in matrix(3, 4, -2.0, 2.0),
    ) {
        let a = intra_contrastive_loss(&z1, &z2, 0.1);
        let b = intra_contrastive_loss(&z2, &z1, 0.1);
        prop_assert!((a - b).abs() < 1e-9);
    }
}
