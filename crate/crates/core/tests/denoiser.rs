use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::Rng;

use mtsci::denoiser::{ConditionSource, Denoiser, DenoiserBatch, DenoiserConfig};
use mtsci::rng::rng_from_seed;
use mtsci::tape::Tape;

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

fn batch(l: usize, c: usize, b: usize, seed: u64) -> DenoiserBatch<f64> {
    let mut rng = rng_from_seed(seed);
    let rows = b * l;
    let cond_mask = random(rows, c, &mut rng).mapv(|v| f64::from(v > 0.0));
    let context_mask = random(rows, c, &mut rng).mapv(|v| f64::from(v > -0.5));
    DenoiserBatch {
        noisy: random(rows, c, &mut rng) * &cond_mask.mapv(|m| 1.0 - m),
        steps: (0..b).map(|i| 3 + 11 * i).collect(),
        condition: ConditionSource {
            sampled_co: random(rows, c, &mut rng) * &cond_mask,
            context_co: random(rows, c, &mut rng) * &context_mask,
            cond_mask,
            context_mask,
            mix: random(rows, c, &mut rng).mapv(|v| (v + 1.0) / 2.0),
        },
    }
}

/// `sum(eps^2) + sum(r * z)` with a fixed random `r`, so both heads are
/// exercised.
fn loss(net: &Denoiser<f64>, b: &DenoiserBatch<f64>, r: &Array2<f64>) -> f64 {
    let (eps, z) = net.predict(b).unwrap();
    eps.iter().map(|e| e * e).sum::<f64>() + (&z * r).sum()
}

#[test]
fn analytic_gradients_match_central_differences() {
    let start = Instant::now();
    let cfg = DenoiserConfig {
        window: 4,
        features: 2,
        hidden: 8,
        layers: 1,
        heads: 2,
        ff_dim: 8,
        ..Default::default()
    };
    let mut net = Denoiser::<f64>::new(cfg.clone(), 7).unwrap();
    // Move the context transform off the identity so its gradient is generic.
    let mut rng = rng_from_seed(99);
    let (cw, cb) = net.context_transform_params();
    *net.params_mut().get_mut(cw) += &(random(4, 4, &mut rng) * 0.3);
    *net.params_mut().get_mut(cb) += &(random(4, 1, &mut rng) * 0.3);
    let b = batch(cfg.window, cfg.features, 2, 5);
    let r = random(2, cfg.hidden, &mut rng);

    let mut tape = Tape::new();
    let out = net.forward(&mut tape, &b, None).unwrap();
    let eps = tape.value(out.eps).clone();
    let grads = tape.backward(
        &[(out.eps, eps * 2.0), (out.z, r.clone())],
        net.params().len(),
    );

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let ids: Vec<_> = net.params().iter().map(|(id, name, _)| (id, name.to_owned())).collect();
    for (id, name) in ids {
        let analytic = grads[id.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(net.params().get(id).dim()))
            .as_standard_layout()
            .into_owned();
        let n = analytic.len();
        for i in 0..n {
            let orig = net.params().get(id).as_slice().unwrap()[i];
            net.params_mut().get_mut(id).as_slice_mut().unwrap()[i] = orig + h;
            let up = loss(&net, &b, &r);
            net.params_mut().get_mut(id).as_slice_mut().unwrap()[i] = orig - h;
            let down = loss(&net, &b, &r);
            net.params_mut().get_mut(id).as_slice_mut().unwrap()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            assert!(rel < 1e-4, "{name}[{i}]: analytic {a} vs numeric {numeric} (rel {rel})");
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert_eq!(checked, net.params().num_scalars());
    assert!(start.elapsed().as_secs_f64() < 60.0);
    eprintln!("checked {checked} parameters, worst relative error {worst:.2e}");
}

fn permute_cols(a: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    a.select(Axis(1), perm)
}

/// Relabelling the features (inputs and per-feature embeddings) relabels the
/// predictions and leaves the pooled embedding unchanged.
#[test]
fn feature_permutation_equivariance() {
    let cfg = DenoiserConfig {
        window: 5,
        features: 4,
        hidden: 8,
        layers: 2,
        heads: 2,
        ff_dim: 8,
        ..Default::default()
    };
    let mut net = Denoiser::<f64>::new(cfg.clone(), 3).unwrap();
    let mut rng = rng_from_seed(4);
    let (cw, cb) = net.context_transform_params();
    *net.params_mut().get_mut(cw) = random(5, 5, &mut rng);
    *net.params_mut().get_mut(cb) = random(5, 1, &mut rng);
    let b = batch(cfg.window, cfg.features, 3, 8);
    let (eps, z) = net.predict(&b).unwrap();

    let perm = [2, 0, 3, 1];
    let mut pnet = net.clone();
    for id in net.feature_embedding_params() {
        let fe = net.params().get(id).select(Axis(0), &perm);
        *pnet.params_mut().get_mut(id) = fe;
    }
    let cond = &b.condition;
    let pb = DenoiserBatch {
        noisy: permute_cols(&b.noisy, &perm),
        steps: b.steps.clone(),
        condition: ConditionSource {
            sampled_co: permute_cols(&cond.sampled_co, &perm),
            cond_mask: permute_cols(&cond.cond_mask, &perm),
            context_co: permute_cols(&cond.context_co, &perm),
            context_mask: permute_cols(&cond.context_mask, &perm),
            mix: permute_cols(&cond.mix, &perm),
        },
    };
    let (peps, pz) = pnet.predict(&pb).unwrap();
    let want = permute_cols(&eps, &perm);
    for (a, b) in peps.iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    for (a, b) in pz.iter().zip(z.iter()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn f32_tracks_f64() {
    let cfg = DenoiserConfig {
        window: 6,
        features: 3,
        hidden: 16,
        layers: 2,
        heads: 4,
        ff_dim: 16,
        ..Default::default()
    };
    let n64 = Denoiser::<f64>::new(cfg.clone(), 1).unwrap();
    let n32 = Denoiser::<f32>::new(cfg.clone(), 1).unwrap();
    let b = batch(cfg.window, cfg.features, 2, 3);
    let b32 = DenoiserBatch {
        noisy: b.noisy.mapv(|v| v as f32),
        steps: b.steps.clone(),
        condition: ConditionSource {
            sampled_co: b.condition.sampled_co.mapv(|v| v as f32),
            cond_mask: b.condition.cond_mask.mapv(|v| v as f32),
            context_co: b.condition.context_co.mapv(|v| v as f32),
            context_mask: b.condition.context_mask.mapv(|v| v as f32),
            mix: b.condition.mix.mapv(|v| v as f32),
        },
    };
    let (e64, _) = n64.predict(&b).unwrap();
    let (e32, _) = n32.predict(&b32).unwrap();
    for (a, b) in e64.iter().zip(e32.iter()) {
        assert!((a - f64::from(*b)).abs() < 1e-4);
    }
}
