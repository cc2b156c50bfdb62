//! Losses and the training loop.
//!
//! One optimizer step draws, for every window pair in the batch, a target
//! mask and its complementary views, a diffusion step, Gaussian noise and a
//! mixing matrix; runs the denoiser on both views; and minimizes the masked
//! denoising loss plus the weighted contrastive loss between the two views'
//! embeddings.

use ndarray::{s, Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Window, WindowPair};
use crate::denoiser::{ConditionSource, Denoiser, DenoiserBatch};
use crate::diffusion::DiffusionSchedule;
use crate::masking::{complementary_views, sample_training_mask, MaskStrategy};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tape::{Grads, Params, Tape};
use crate::{Error, Real, Result};

/// Norm floor used by the cosine similarity.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    PredictNoise,
    PredictX0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Squared error summed over target cells and divided by their count.
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Contrastive weight.
    pub lambda: f64,
    /// Contrastive temperature.
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs after which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    /// Stop after this many epochs without validation improvement; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub intra_on: bool,
    pub inter_on: bool,
    /// Compute the denoising loss on the second view too.
    pub both_views: bool,
    pub reduction: Reduction,
    pub objective: Objective,
    /// Cap on optimizer steps per epoch; `None` runs every batch.
    pub max_batches: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            tau: 0.1,
            batch_size: 16,
            epochs: 100,
            learning_rate: 1e-3,
            lr_decay_epochs: Vec::new(),
            lr_decay_factor: 0.1,
            patience: 10,
            seed: 0,
            intra_on: true,
            inter_on: true,
            both_views: true,
            reduction: Reduction::Mean,
            objective: Objective::PredictNoise,
            max_batches: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("train.lambda = {} < 0", self.lambda)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("train.tau = {} <= 0", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        Ok(())
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.learning_rate * self.lr_decay_factor.powi(decays as i32)
    }
}

/// Masked squared error between true and predicted noise over target cells.
pub fn denoising_loss<F: Real>(
    true_eps: &Array2<F>,
    predicted: &Array2<F>,
    target_mask: &Array2<F>,
    reduction: Reduction,
) -> f64 {
    denoising_loss_with_grad(true_eps, predicted, target_mask, reduction).0
}

/// Loss value and its gradient with respect to `predicted`.
pub fn denoising_loss_with_grad<F: Real>(
    true_eps: &Array2<F>,
    predicted: &Array2<F>,
    target_mask: &Array2<F>,
    reduction: Reduction,
) -> (f64, Array2<F>) {
    let count = target_mask.iter().filter(|&&m| m > F::zero()).count();
    if count == 0 {
        log::warn!("denoising loss over an empty target set");
        return (0.0, Array2::zeros(predicted.dim()));
    }
    let denom = match reduction {
        Reduction::Mean => count as f64,
        Reduction::Sum => 1.0,
    };
    let mut total = 0.0;
    let scale = F::from_f64_lossy(2.0 / denom);
    let grad = Zip::from(true_eps)
        .and(predicted)
        .and(target_mask)
        .map_collect(|&t, &p, &m| {
            if m > F::zero() {
                let e = p - t;
                total += (e * e).as_f64();
                scale * e
            } else {
                F::zero()
            }
        });
    (total / denom, grad)
}

/// Contrastive loss between complementary view embeddings `z1[i]`, `z2[i]`.
pub fn intra_contrastive_loss<F: Real>(z1: &Array2<F>, z2: &Array2<F>, tau: f64) -> f64 {
    intra_contrastive_loss_with_grad(z1, z2, tau).0
}

/// Normalized-temperature cross entropy over the `2N` views of a batch.
///
/// Each view's positive is its complementary partner; every other view in
/// the batch is a negative. Returns the loss averaged over all `2N` anchors
/// and its gradients with respect to `z1` and `z2`.
pub fn intra_contrastive_loss_with_grad<F: Real>(
    z1: &Array2<F>,
    z2: &Array2<F>,
    tau: f64,
) -> (f64, Array2<F>, Array2<F>) {
    assert_eq!(z1.dim(), z2.dim(), "paired embeddings");
    let n = z1.nrows();
    let views = ndarray::concatenate(Axis(0), &[z1.view(), z2.view()])
        .expect("equal widths")
        .mapv(F::as_f64);
    let m = 2 * n;
    let norms: Vec<f64> = views
        .axis_iter(Axis(0))
        .map(|r| r.dot(&r).sqrt().max(NORM_FLOOR))
        .collect();
    let mut unit = views.clone();
    for (mut row, &nr) in unit.axis_iter_mut(Axis(0)).zip(&norms) {
        row /= nr;
    }
    let logits = unit.dot(&unit.t()) / tau;
    let partner = |a: usize| if a < n { a + n } else { a - n };

    let mut loss = 0.0;
    // dL/dlogits
    let mut g = Array2::<f64>::zeros((m, m));
    for a in 0..m {
        let row = logits.row(a);
        let max = (0..m)
            .filter(|&j| j != a)
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..m).filter(|&j| j != a).map(|j| (row[j] - max).exp()).sum();
        let log_denom = max + denom.ln();
        loss += log_denom - row[partner(a)];
        for j in (0..m).filter(|&j| j != a) {
            g[[a, j]] = (row[j] - log_denom).exp() / m as f64;
        }
        g[[a, partner(a)]] -= 1.0 / m as f64;
    }
    loss /= m as f64;

    let sym = (&g + &g.t()) / tau;
    let dunit = sym.dot(&unit);
    let mut dviews = Array2::<f64>::zeros(views.dim());
    for i in 0..m {
        let u = unit.row(i);
        let du = dunit.row(i);
        let proj = u.dot(&du);
        let mut out = dviews.row_mut(i);
        out.assign(&((&du - &(&u * proj)) / norms[i]));
    }
    let dviews = dviews.mapv(F::from_f64_lossy);
    (
        loss,
        dviews.slice(s![..n, ..]).to_owned(),
        dviews.slice(s![n.., ..]).to_owned(),
    )
}

/// `denoise + lambda * contrastive`, with the contrastive term dropped when
/// intra-consistency is off.
pub fn total_loss(denoise: f64, contrastive: f64, lambda: f64, intra_on: bool) -> f64 {
    if intra_on {
        denoise + lambda * contrastive
    } else {
        denoise
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Array2<F>>,
    pub second: Vec<Array2<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &Params<F>) -> Self {
        let zeros: Vec<Array2<F>> = params
            .iter()
            .map(|(_, _, t)| Array2::zeros(t.dim()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn update(&mut self, params: &mut Params<F>, grads: &Grads<F>, lr: f64) {
        self.step += 1;
        let b1 = F::from_f64_lossy(self.beta1);
        let b2 = F::from_f64_lossy(self.beta2);
        let one = F::one();
        let c1 = F::from_f64_lossy(1.0 - self.beta1.powi(self.step as i32));
        let c2 = F::from_f64_lossy(1.0 - self.beta2.powi(self.step as i32));
        let lr = F::from_f64_lossy(lr);
        let eps = F::from_f64_lossy(self.eps);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            Zip::from(p)
                .and(g)
                .and(&mut self.first[i])
                .and(&mut self.second[i])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}

/// Metrics of one finished epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub denoise_loss: f64,
    pub contrastive_loss: f64,
    /// `None` without validation windows.
    pub val_loss: Option<f64>,
}

/// Mutable training state, resumable from a checkpoint.
#[derive(Debug, Clone)]
pub struct TrainState<F> {
    pub epochs_completed: usize,
    pub optimizer: Adam<F>,
    pub best_params: Params<F>,
    pub best_val: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stale_epochs: usize,
}

impl<F: Real> TrainState<F> {
    pub fn fresh(model: &Denoiser<F>) -> Self {
        Self {
            epochs_completed: 0,
            optimizer: Adam::new(model.params()),
            best_params: model.params().clone(),
            best_val: f64::INFINITY,
            best_epoch: 0,
            history: Vec::new(),
            stale_epochs: 0,
        }
    }
}

/// One window's random draws for a training step.
struct Draw {
    k: usize,
    eps: Array2<f64>,
    target1: Array2<bool>,
    cond1: Array2<bool>,
    target2: Array2<bool>,
    cond2: Array2<bool>,
    mix: Array2<f64>,
}

fn draw_for<R: Rng>(
    pair: &WindowPair,
    strategy: &MaskStrategy,
    schedule: &DiffusionSchedule,
    inter_on: bool,
    rng: &mut R,
) -> Result<Draw> {
    let w = &pair.sampled;
    let observed = w.cond_mask();
    let m = sample_training_mask(&observed, strategy, rng);
    let views = complementary_views(w, &m)?;
    let k = rng.random_range(1..=schedule.steps());
    let eps = Array2::from_shape_simple_fn(w.values.dim(), || rng.sample(StandardNormal));
    let mix = if inter_on && pair.has_context() {
        Array2::from_shape_simple_fn(w.values.dim(), || rng.random::<f64>())
    } else {
        Array2::ones(w.values.dim())
    };
    Ok(Draw {
        k,
        eps,
        target1: views.view1.target_mask,
        cond1: views.view1.cond_mask,
        target2: views.view2.target_mask,
        cond2: views.view2.cond_mask,
        mix,
    })
}

/// Stacked network inputs plus loss targets for a list of views.
struct ViewBatch<F> {
    input: DenoiserBatch<F>,
    target: Array2<F>,
    target_mask: Array2<F>,
}

struct ViewSpec<'a> {
    window: &'a Window,
    context: Option<&'a Window>,
    targets: &'a Array2<bool>,
    cond: &'a Array2<bool>,
    k: usize,
    eps: &'a Array2<f64>,
    mix: &'a Array2<f64>,
}

fn assemble<F: Real>(
    views: &[ViewSpec<'_>],
    schedule: &DiffusionSchedule,
    objective: Objective,
) -> Result<ViewBatch<F>> {
    let (l, c) = views[0].window.values.dim();
    let rows = views.len() * l;
    let mut noisy = Array2::<F>::zeros((rows, c));
    let mut target = Array2::<F>::zeros((rows, c));
    let mut target_mask = Array2::<F>::zeros((rows, c));
    let mut sampled_co = Array2::<F>::zeros((rows, c));
    let mut cond_mask = Array2::<F>::zeros((rows, c));
    let mut context_co = Array2::<F>::zeros((rows, c));
    let mut context_mask = Array2::<F>::zeros((rows, c));
    let mut mix = Array2::<F>::ones((rows, c));
    let mut steps = Vec::with_capacity(views.len());
    for (b, v) in views.iter().enumerate() {
        let (a, s) = schedule.noise_coefficients(v.k)?;
        steps.push(v.k);
        let ctx_mask = v.context.map(Window::cond_mask);
        for t in 0..l {
            for j in 0..c {
                let r = b * l + t;
                let x0 = v.window.values[[t, j]];
                if v.targets[[t, j]] {
                    let e = v.eps[[t, j]];
                    noisy[[r, j]] = F::from_f64_lossy(a * x0 + s * e);
                    target[[r, j]] = F::from_f64_lossy(match objective {
                        Objective::PredictNoise => e,
                        Objective::PredictX0 => x0,
                    });
                    target_mask[[r, j]] = F::one();
                }
                if v.cond[[t, j]] {
                    sampled_co[[r, j]] = F::from_f64_lossy(x0);
                    cond_mask[[r, j]] = F::one();
                }
                if let (Some(ctx), Some(cm)) = (v.context, &ctx_mask) {
                    if cm[[t, j]] {
                        context_co[[r, j]] = F::from_f64_lossy(ctx.values[[t, j]]);
                        context_mask[[r, j]] = F::one();
                    }
                    mix[[r, j]] = F::from_f64_lossy(v.mix[[t, j]]);
                }
            }
        }
    }
    Ok(ViewBatch {
        input: DenoiserBatch {
            noisy,
            steps,
            condition: ConditionSource {
                sampled_co,
                cond_mask,
                context_co,
                context_mask,
                mix,
            },
        },
        target,
        target_mask,
    })
}

/// Loss terms and gradients of one batch.
#[derive(Debug, Clone)]
pub struct StepResult<F> {
    pub total: f64,
    pub denoise: f64,
    pub contrastive: f64,
    pub grads: Grads<F>,
}

const EPOCH_STREAM: u64 = 0x45_50_4f_43;
const VAL_STREAM: u64 = 0x56_41_4c;
const DROPOUT_STREAM: u64 = 0x44_52_4f_50;

/// Computes losses and gradients for one batch of window pairs.
pub fn batch_step<F: Real, R: Rng>(
    model: &Denoiser<F>,
    schedule: &DiffusionSchedule,
    pairs: &[&WindowPair],
    cfg: &TrainConfig,
    strategy: &MaskStrategy,
    rng: &mut R,
    dropout_rng: Option<&mut crate::rng::Rng>,
) -> Result<(StepResult<F>, Vec<usize>)> {
    let draws = pairs
        .iter()
        .map(|p| draw_for(p, strategy, schedule, cfg.inter_on, rng))
        .collect::<Result<Vec<_>>>()?;
    let second_view = cfg.both_views || cfg.intra_on;
    let mut specs = Vec::with_capacity(pairs.len() * 2);
    for (p, d) in pairs.iter().zip(&draws) {
        specs.push(ViewSpec {
            window: &p.sampled,
            context: p.context.as_ref(),
            targets: &d.target1,
            cond: &d.cond1,
            k: d.k,
            eps: &d.eps,
            mix: &d.mix,
        });
    }
    if second_view {
        for (p, d) in pairs.iter().zip(&draws) {
            specs.push(ViewSpec {
                window: &p.sampled,
                context: p.context.as_ref(),
                targets: &d.target2,
                cond: &d.cond2,
                k: d.k,
                eps: &d.eps,
                mix: &d.mix,
            });
        }
    }
    let batch = assemble::<F>(&specs, schedule, cfg.objective)?;
    let n = pairs.len();
    let l = model.config().window;

    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &batch.input, dropout_rng)?;
    let rows = batch.target.nrows();
    let c = batch.target.ncols();
    let pred = tape
        .value(out.eps)
        .clone()
        .into_shape_with_order((rows, c))
        .expect("row-major");

    let mut loss_mask = batch.target_mask.clone();
    if second_view && !cfg.both_views {
        loss_mask.slice_mut(s![n * l.., ..]).fill(F::zero());
    }
    let (denoise, dpred) =
        denoising_loss_with_grad(&batch.target, &pred, &loss_mask, cfg.reduction);

    let mut seeds = vec![(
        out.eps,
        dpred.into_shape_with_order((rows * c, 1)).expect("row-major"),
    )];
    let mut contrastive = 0.0;
    if cfg.intra_on {
        let z = tape.value(out.z);
        let z1 = z.slice(s![..n, ..]).to_owned();
        let z2 = z.slice(s![n.., ..]).to_owned();
        let (cl, g1, g2) = intra_contrastive_loss_with_grad(&z1, &z2, cfg.tau);
        contrastive = cl;
        let lam = F::from_f64_lossy(cfg.lambda);
        let gz = ndarray::concatenate(Axis(0), &[g1.view(), g2.view()]).expect("same width");
        seeds.push((out.z, gz * lam));
    }
    let total = total_loss(denoise, contrastive, cfg.lambda, cfg.intra_on);
    let steps: Vec<usize> = draws.iter().map(|d| d.k).collect();
    if !total.is_finite() {
        // Blame the first window whose predictions blew up.
        let bad = (0..specs.len())
            .find(|&b| {
                pred.slice(s![b * l..(b + 1) * l, ..])
                    .iter()
                    .any(|v| !v.is_finite())
            })
            .map_or(0, |b| b % n);
        return Ok((
            StepResult {
                total,
                denoise,
                contrastive,
                grads: Vec::new(),
            },
            vec![steps[bad]],
        ));
    }
    let grads = tape.backward(&seeds, model.params().len());
    Ok((
        StepResult {
            total,
            denoise,
            contrastive,
            grads,
        },
        steps,
    ))
}

/// Denoising loss on held-out windows with draws fixed by `seed`, using the
/// inference-time condition (observed cells only).
pub fn validation_loss<F: Real>(
    model: &Denoiser<F>,
    schedule: &DiffusionSchedule,
    windows: &[Window],
    strategy: &MaskStrategy,
    cfg: &TrainConfig,
) -> Result<f64> {
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let mut draws = Vec::with_capacity(windows.len());
    for w in windows {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, VAL_STREAM, w.start_index as u64));
        let pair = WindowPair {
            sampled: w.clone(),
            context: None,
        };
        draws.push(draw_for(&pair, strategy, schedule, false, &mut rng)?);
    }
    let mut sum = 0.0;
    let mut count = 0.0;
    let chunk = (cfg.batch_size * 2).max(1);
    for (ws, ds) in windows.chunks(chunk).zip(draws.chunks(chunk)) {
        let specs: Vec<ViewSpec<'_>> = ws
            .iter()
            .zip(ds)
            .map(|(w, d)| ViewSpec {
                window: w,
                context: None,
                targets: &d.target1,
                cond: &d.cond1,
                k: d.k,
                eps: &d.eps,
                mix: &d.mix,
            })
            .collect();
        let batch = assemble::<F>(&specs, schedule, cfg.objective)?;
        let (pred, _) = model.predict(&batch.input)?;
        let cells = batch.target_mask.iter().filter(|&&m| m > F::zero()).count() as f64;
        if cells > 0.0 {
            let l = denoising_loss(&batch.target, &pred, &batch.target_mask, Reduction::Mean);
            sum += l * cells;
            count += cells;
        }
    }
    Ok(if count > 0.0 { sum / count } else { 0.0 })
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub state: TrainState<F>,
    /// Epoch records produced by this call (excluding resumed history).
    pub new_records: Vec<EpochRecord>,
}

/// Runs the training loop for `cfg.epochs` epochs past `state`.
///
/// `model` ends holding the last-epoch parameters; the best validation
/// parameters are kept in the returned state. `on_epoch` sees each record as
/// it is produced.
#[allow(clippy::too_many_arguments)]
pub fn train<F: Real>(
    model: &mut Denoiser<F>,
    schedule: &DiffusionSchedule,
    train_pairs: &[WindowPair],
    val_windows: &[Window],
    strategy: &MaskStrategy,
    cfg: &TrainConfig,
    state: Option<TrainState<F>>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    strategy.validate()?;
    let mut state = state.unwrap_or_else(|| TrainState::fresh(model));
    if cfg.epochs == 0 {
        log::warn!("zero training epochs requested; keeping current parameters");
    }
    if train_pairs.is_empty() && cfg.epochs > 0 {
        return Err(Error::Validation("no training windows".into()));
    }
    let mut new_records = Vec::new();
    let first = state.epochs_completed;
    for epoch in first..first + cfg.epochs {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, EPOCH_STREAM, epoch as u64));
        let mut dropout_rng = rng_from_seed(derive_seed(cfg.seed, DROPOUT_STREAM, epoch as u64));
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        order.shuffle(&mut rng);
        let lr = cfg.learning_rate_at(epoch);
        let (mut tot, mut den, mut con, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_batches.is_some_and(|m| bi >= m) {
                break;
            }
            let pairs: Vec<&WindowPair> = idx.iter().map(|&i| &train_pairs[i]).collect();
            let (step, ks) = batch_step(
                model,
                schedule,
                &pairs,
                cfg,
                strategy,
                &mut rng,
                Some(&mut dropout_rng),
            )?;
            if !step.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi,
                    k: ks[0],
                    loss: step.total,
                });
            }
            state
                .optimizer
                .update(model.params_mut(), &step.grads, lr);
            tot += step.total;
            den += step.denoise;
            con += step.contrastive;
            batches += 1;
        }
        let nb = batches.max(1) as f64;
        let val = validation_loss(model, schedule, val_windows, strategy, cfg)?;
        let record = EpochRecord {
            epoch,
            train_loss: tot / nb,
            denoise_loss: den / nb,
            contrastive_loss: con / nb,
            val_loss: val.is_finite().then_some(val),
        };
        log::info!(
            "epoch {epoch}: train {:.5} denoise {:.5} contrastive {:.5} val {:.5}",
            record.train_loss,
            record.denoise_loss,
            record.contrastive_loss,
            val
        );
        on_epoch(&record);
        let score = if val.is_finite() { val } else { record.train_loss };
        if score < state.best_val {
            state.best_val = score;
            state.best_epoch = epoch;
            state.best_params = model.params().clone();
            state.stale_epochs = 0;
        } else {
            state.stale_epochs += 1;
        }
        state.epochs_completed = epoch + 1;
        state.history.push(record.clone());
        new_records.push(record);
        if cfg.patience > 0 && state.stale_epochs >= cfg.patience {
            log::info!("early stop after {} stale epochs", state.stale_epochs);
            break;
        }
    }
    if state.history.is_empty() {
        state.best_params = model.params().clone();
    }
    Ok(TrainOutcome { state, new_records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let t = array![[0.5, -1.0], [2.0, 0.1]];
        let m = Array2::ones((2, 2));
        assert_eq!(denoising_loss(&t, &t, &m, Reduction::Mean), 0.0);
    }

    #[test]
    fn non_target_perturbation_is_ignored() {
        let t = array![[0.5, -1.0], [2.0, 0.1]];
        let m = array![[1.0, 0.0], [0.0, 1.0]];
        let p = array![[0.4, -1.0], [2.0, 0.3]];
        let mut q = p.clone();
        q[[0, 1]] = 100.0;
        q[[1, 0]] = -7.0;
        let (a, ga) = denoising_loss_with_grad(&t, &p, &m, Reduction::Mean);
        let (b, gb) = denoising_loss_with_grad(&t, &q, &m, Reduction::Mean);
        assert_eq!(a, b);
        assert_eq!(ga[[0, 1]], 0.0);
        assert_eq!(gb[[1, 0]], 0.0);
    }

    #[test]
    fn two_cell_hand_value() {
        let t = array![[1.0, -2.0]];
        let p = array![[0.0, 0.0]];
        let m = array![[1.0, 1.0]];
        assert_eq!(denoising_loss(&t, &p, &m, Reduction::Mean), 2.5);
        assert_eq!(denoising_loss(&t, &p, &m, Reduction::Sum), 5.0);
    }

    #[test]
    fn empty_target_set_gives_zero() {
        let t = array![[1.0]];
        assert_eq!(denoising_loss(&t, &t, &array![[0.0]], Reduction::Mean), 0.0);
    }

    #[test]
    fn contrastive_single_pair_is_zero() {
        let z = array![[0.3, -1.0, 2.0]];
        assert!(intra_contrastive_loss(&z, &z, 0.1).abs() < 1e-12);
        let z2 = array![[1.0, 1.0, 0.0]];
        assert!(intra_contrastive_loss(&z, &z2, 0.5).abs() < 1e-12);
    }

    #[test]
    fn contrastive_orthogonal_pairs() {
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        let got = intra_contrastive_loss(&z, &z, 1.0);
        let e = std::f64::consts::E;
        let want = -(e / (e + 2.0)).ln();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.551445).abs() < 1e-6);
    }

    #[test]
    fn contrastive_scale_invariant() {
        let z1 = array![[0.3, -1.0, 2.0], [1.0, 0.5, 0.2], [-0.4, 0.1, 0.9]];
        let z2 = array![[0.1, -0.7, 1.0], [0.8, 0.4, -0.2], [0.0, 0.3, 1.1]];
        let a = intra_contrastive_loss(&z1, &z2, 0.1);
        let b = intra_contrastive_loss(&(&z1 * 3.0), &(&z2 * 3.0), 0.1);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn contrastive_gradient_matches_differences() {
        let z1 = array![[0.3, -1.0, 2.0], [1.0, 0.5, 0.2], [-0.4, 0.1, 0.9]];
        let z2 = array![[0.1, -0.7, 1.0], [0.8, 0.4, -0.2], [0.0, 0.3, 1.1]];
        let tau = 0.3;
        let (_, g1, g2) = intra_contrastive_loss_with_grad(&z1, &z2, tau);
        let h = 1e-6;
        for (which, grad) in [(0, &g1), (1, &g2)] {
            for idx in 0..9 {
                let (mut a, mut b) = (z1.clone(), z2.clone());
                let target = if which == 0 { &mut a } else { &mut b };
                target.as_slice_mut().unwrap()[idx] += h;
                let up = intra_contrastive_loss(&a, &b, tau);
                let target = if which == 0 { &mut a } else { &mut b };
                target.as_slice_mut().unwrap()[idx] -= 2.0 * h;
                let down = intra_contrastive_loss(&a, &b, tau);
                let numeric = (up - down) / (2.0 * h);
                let analytic = grad.as_slice().unwrap()[idx];
                assert!((numeric - analytic).abs() < 1e-7, "{numeric} vs {analytic}");
            }
        }
    }

    #[test]
    fn zero_embedding_stays_finite() {
        let z1 = array![[0.0, 0.0], [1.0, 0.0]];
        let z2 = array![[0.0, 1.0], [1.0, 1.0]];
        let (l, g1, g2) = intra_contrastive_loss_with_grad(&z1, &z2, 0.1);
        assert!(l.is_finite());
        assert!(g1.iter().chain(g2.iter()).all(|v: &f64| v.is_finite()));
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(2.5, 0.5, 0.0, true), 2.5);
        assert!((total_loss(2.5, 0.5, 0.1, true) - 2.55).abs() < 1e-15);
        assert_eq!(total_loss(2.5, 0.5, 0.7, false), total_loss(2.5, 0.5, 0.0, true));
    }

    #[test]
    fn step_decay() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            lr_decay_epochs: vec![2, 4],
            lr_decay_factor: 0.5,
            ..Default::default()
        };
        assert_eq!(cfg.learning_rate_at(1), 1.0);
        assert_eq!(cfg.learning_rate_at(2), 0.5);
        assert_eq!(cfg.learning_rate_at(5), 0.25);
    }

    #[test]
    fn config_ranges() {
        let bad = TrainConfig {
            tau: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lambda: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
