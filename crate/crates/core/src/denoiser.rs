//! The noise-prediction network.
//!
//! Tokens are the `L x C` cells of a window, laid out row-major as
//! `(batch, time, feature)`, each carrying a `d`-wide hidden vector. Every
//! encoder layer fuses the condition representation into its input, runs a
//! transformer block over time (per feature) and then an inverted block over
//! features (per time step). The decoder normalizes the concatenated layer
//! outputs and projects each token back to a scalar noise estimate.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;
use crate::tape::{Groups, ParamId, Params, Tape, Var};
use crate::{Error, Real, Result};

/// How the condition representation enters each encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Concatenate channels, then the layer's fusing linear map.
    #[default]
    Concat,
    /// Add, then the fusing linear map.
    Add,
}

/// How the per-view embedding is pooled from the last encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    #[default]
    Mean,
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Window length `L`.
    pub window: usize,
    /// Number of features `C`.
    pub features: usize,
    /// Hidden width `d`; must be even.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub fusion: Fusion,
    pub pool: Pool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            window: 24,
            features: 1,
            hidden: 64,
            layers: 2,
            heads: 8,
            ff_dim: 64,
            dropout: 0.0,
            fusion: Fusion::Concat,
            pool: Pool::Mean,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden % 2 != 0 {
            return Err(Error::Config(format!(
                "model.d = {} must be positive and even",
                self.hidden
            )));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.heads = {} must divide model.d = {}",
                self.heads, self.hidden
            )));
        }
        if self.layers == 0 || self.window == 0 || self.features == 0 || self.ff_dim == 0 {
            return Err(Error::Config(
                "model.layers, model.ff_dim, window length and feature count must be positive"
                    .into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "model.dropout = {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        self.window * self.features
    }

    /// Width of the pooled per-view embedding.
    pub fn embedding_width(&self) -> usize {
        match self.pool {
            Pool::Mean => self.hidden,
            Pool::Flatten => self.hidden * self.tokens(),
        }
    }
}

/// Sinusoidal diffusion-step bank of width `d`: `w = d/2` sines followed by
/// `w` cosines at frequencies `10^(4j/(w-1))`, `j = 0..w`.
pub fn step_bank(k: usize, d: usize) -> Result<Vec<f64>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::Config(format!("step embedding width {d} must be even")));
    }
    let w = d / 2;
    let k = k as f64;
    let freq = |j: usize| {
        if w == 1 {
            1.0
        } else {
            10f64.powf(4.0 * j as f64 / (w - 1) as f64)
        }
    };
    let mut out: Vec<f64> = (0..w).map(|j| (freq(j) * k).sin()).collect();
    out.extend((0..w).map(|j| (freq(j) * k).cos()));
    Ok(out)
}

/// Fixed sinusoidal encoding of the time index, `(L, d)`.
pub fn temporal_encoding(steps: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((steps, d), |(t, i)| {
        let pair = (i / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Conditioning inputs for a batch of windows, all `(B * L, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSource<F> {
    /// Sampled-window values at conditioning cells, zero elsewhere.
    pub sampled_co: Array2<F>,
    pub cond_mask: Array2<F>,
    /// Context-window values at its usable observed cells, zero elsewhere.
    pub context_co: Array2<F>,
    pub context_mask: Array2<F>,
    /// Mixing coefficients in `[0, 1]`; all ones means no context.
    pub mix: Array2<F>,
}

impl<F: Real> ConditionSource<F> {
    /// Condition for windows without context (the inference setting).
    pub fn observed_only(sampled_co: Array2<F>, cond_mask: Array2<F>) -> Self {
        let dim = sampled_co.dim();
        Self {
            sampled_co,
            cond_mask,
            context_co: Array2::zeros(dim),
            context_mask: Array2::zeros(dim),
            mix: Array2::ones(dim),
        }
    }

    fn check(&self) -> Result<()> {
        let dim = self.sampled_co.dim();
        for (name, a) in [
            ("cond_mask", &self.cond_mask),
            ("context_co", &self.context_co),
            ("context_mask", &self.context_mask),
            ("mix", &self.mix),
        ] {
            if a.dim() != dim {
                return Err(Error::Shape(format!(
                    "condition {name} {:?} vs sampled {:?}",
                    a.dim(),
                    dim
                )));
            }
        }
        if self.mix.iter().any(|&m| m < F::zero() || m > F::one()) {
            return Err(Error::Validation("mix coefficients outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Cells carrying condition information: the sampled window's
    /// conditioning cells, where the context blend also lands.
    fn provided(&self) -> Array2<F> {
        self.cond_mask.clone()
    }
}

/// Mixed conditional values and the cells they cover, `(B * L, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionInput<F> {
    pub x_mix: Array2<F>,
    pub provided: Array2<F>,
    pub mix: Array2<F>,
}

/// One network evaluation for a batch of windows.
#[derive(Debug, Clone)]
pub struct DenoiserBatch<F> {
    /// Noised target values, zero at non-target cells, `(B * L, C)`.
    pub noisy: Array2<F>,
    /// Diffusion step of each window.
    pub steps: Vec<usize>,
    pub condition: ConditionSource<F>,
}

impl<F: Real> DenoiserBatch<F> {
    pub fn batch_size(&self) -> usize {
        self.steps.len()
    }
}

/// Tape handles to the network outputs.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Predicted noise per token, `(B * L * C, 1)`.
    pub eps: Var,
    /// Pooled view embedding, `(B, embedding_width)`.
    pub z: Var,
}

#[derive(Debug, Clone)]
struct BlockParams {
    w_qkv: ParamId,
    b_qkv: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Debug, Clone)]
struct LayerParams {
    fuse_w: ParamId,
    fuse_b: ParamId,
    temporal: BlockParams,
    feature_emb: ParamId,
    variable: BlockParams,
}

#[derive(Debug, Clone)]
struct Layout {
    in_w: ParamId,
    in_b: ParamId,
    step_w1: ParamId,
    step_b1: ParamId,
    step_w2: ParamId,
    step_b2: ParamId,
    ctx_w: ParamId,
    ctx_b: ParamId,
    cond_w: ParamId,
    cond_b: ParamId,
    layers: Vec<LayerParams>,
    dec_ln_g: ParamId,
    dec_ln_b: ParamId,
    dec_w1: ParamId,
    dec_b1: ParamId,
    dec_w2: ParamId,
    dec_b2: ParamId,
}

/// The noise-prediction network and its parameters.
#[derive(Debug, Clone)]
pub struct Denoiser<F> {
    config: DenoiserConfig,
    params: Params<F>,
    layout: Layout,
    time_table: Array2<F>,
}

struct Init<'a> {
    params: &'a mut Params<f64>,
    rng: crate::rng::Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let a = 1.0 / (fan_in as f64).sqrt();
        let rng = &mut self.rng;
        let v = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a));
        self.params.add(name, v)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> (ParamId, ParamId) {
        (
            self.uniform(format!("{name}.weight"), fan_in, fan_out, fan_in),
            self.uniform(format!("{name}.bias"), 1, fan_out, fan_in),
        )
    }

    fn norm(&mut self, name: &str, width: usize) -> (ParamId, ParamId) {
        (
            self.params
                .add(format!("{name}.gain"), Array2::ones((1, width))),
            self.params
                .add(format!("{name}.offset"), Array2::zeros((1, width))),
        )
    }

    fn block(&mut self, name: &str, d: usize, ff: usize) -> BlockParams {
        let (w_qkv, b_qkv) = self.linear(&format!("{name}.qkv"), d, 3 * d);
        let (w_o, b_o) = self.linear(&format!("{name}.out"), d, d);
        let (ln1_g, ln1_b) = self.norm(&format!("{name}.norm1"), d);
        let (ff1_w, ff1_b) = self.linear(&format!("{name}.ff1"), d, ff);
        let (ff2_w, ff2_b) = self.linear(&format!("{name}.ff2"), ff, d);
        let (ln2_g, ln2_b) = self.norm(&format!("{name}.norm2"), d);
        BlockParams {
            w_qkv,
            b_qkv,
            w_o,
            b_o,
            ln1_g,
            ln1_b,
            ff1_w,
            ff1_b,
            ff2_w,
            ff2_b,
            ln2_g,
            ln2_b,
        }
    }
}

impl<F: Real> Denoiser<F> {
    /// Freshly initialized network.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let c = config.features;
        let mut store = Params::<f64>::default();
        let mut init = Init {
            params: &mut store,
            rng: rng_from_seed(seed),
        };
        let (in_w, in_b) = init.linear("input", 1, d);
        let (step_w1, step_b1) = init.linear("step.ff1", d, d);
        let (step_w2, step_b2) = init.linear("step.ff2", d, d);
        // The context transform maps the adjacent window's time steps onto
        // this window's, shared across features; it starts as the identity.
        let l = config.window;
        let ctx_w = init.params.add("context.weight", Array2::eye(l));
        let ctx_b = init.params.add("context.bias", Array2::zeros((l, 1)));
        let (cond_w, cond_b) = init.linear("condition", 2, d);
        let fuse_in = match config.fusion {
            Fusion::Concat => 2 * d,
            Fusion::Add => d,
        };
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let layers = (0..config.layers)
            .map(|i| {
                let (fuse_w, fuse_b) = init.linear(&format!("layer{i}.fuse"), fuse_in, d);
                let temporal = init.block(&format!("layer{i}.temporal"), d, config.ff_dim);
                let rng = &mut init.rng;
                let fe = Array2::from_shape_fn((c, d), |_| normal.sample(rng));
                let feature_emb = init.params.add(format!("layer{i}.feature_embedding"), fe);
                let variable = init.block(&format!("layer{i}.variable"), d, config.ff_dim);
                LayerParams {
                    fuse_w,
                    fuse_b,
                    temporal,
                    feature_emb,
                    variable,
                }
            })
            .collect();
        let cat = config.layers * d;
        let (dec_ln_g, dec_ln_b) = init.norm("decoder.norm", cat);
        let (dec_w1, dec_b1) = init.linear("decoder.ff1", cat, d);
        let (dec_w2, dec_b2) = init.linear("decoder.ff2", d, 1);
        let layout = Layout {
            in_w,
            in_b,
            step_w1,
            step_b1,
            step_w2,
            step_b2,
            ctx_w,
            ctx_b,
            cond_w,
            cond_b,
            layers,
            dec_ln_g,
            dec_ln_b,
            dec_w1,
            dec_b1,
            dec_w2,
            dec_b2,
        };
        let time_table = temporal_encoding(config.window, d).mapv(F::from_f64_lossy);
        Ok(Self {
            config,
            params: Params::from_f64(&store),
            layout,
            time_table,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<F> {
        &mut self.params
    }

    /// Ids of the decoder head tensors.
    pub fn decoder_params(&self) -> [ParamId; 6] {
        let l = &self.layout;
        [
            l.dec_ln_g, l.dec_ln_b, l.dec_w1, l.dec_b1, l.dec_w2, l.dec_b2,
        ]
    }

    /// Ids of the learned feature embeddings, one per layer.
    pub fn feature_embedding_params(&self) -> Vec<ParamId> {
        self.layout.layers.iter().map(|l| l.feature_emb).collect()
    }

    /// Ids of the context transform weight and bias.
    pub fn context_transform_params(&self) -> (ParamId, ParamId) {
        (self.layout.ctx_w, self.layout.ctx_b)
    }

    /// Step embedding after the feed-forward, one row per step.
    pub fn embed_steps(&self, tape: &mut Tape<F>, steps: &[usize]) -> Result<Var> {
        let d = self.config.hidden;
        let mut bank = Array2::<F>::zeros((steps.len(), d));
        for (mut row, &k) in bank.rows_mut().into_iter().zip(steps) {
            for (dst, v) in row.iter_mut().zip(step_bank(k, d)?) {
                *dst = F::from_f64_lossy(v);
            }
        }
        let l = &self.layout;
        let x = tape.input(bank);
        let w1 = tape.param(&self.params, l.step_w1);
        let b1 = tape.param(&self.params, l.step_b1);
        let w2 = tape.param(&self.params, l.step_w2);
        let b2 = tape.param(&self.params, l.step_b2);
        let h = tape.linear(x, w1, b1);
        let h = tape.silu(h);
        Ok(tape.linear(h, w2, b2))
    }

    /// Mixes sampled and transformed context conditioning values.
    ///
    /// Returns the mixed values `(B * L, C)` and the covered-cell indicator.
    pub fn mix_condition(
        &self,
        tape: &mut Tape<F>,
        source: &ConditionSource<F>,
    ) -> Result<(Var, Array2<F>)> {
        source.check()?;
        if source.sampled_co.ncols() != self.config.features {
            return Err(Error::Shape(format!(
                "condition has {} features, model expects {}",
                source.sampled_co.ncols(),
                self.config.features
            )));
        }
        let ctx = tape.input(source.context_co.clone());
        let w = tape.param(&self.params, self.layout.ctx_w);
        let b = tape.param(&self.params, self.layout.ctx_b);
        let transformed = tape.block_affine(w, b, ctx);
        let keep_ctx = source.mix.mapv(|m| F::one() - m);
        let weighted = tape.mul_const(transformed, keep_ctx);
        let own = &source.mix * &source.sampled_co;
        let x_mix = tape.add_const(weighted, &own);
        Ok((x_mix, source.provided()))
    }

    /// Value-level mixed condition, for inspection and tests.
    pub fn build_condition(&self, source: &ConditionSource<F>) -> Result<ConditionInput<F>> {
        let mut tape = Tape::new();
        let (x_mix, provided) = self.mix_condition(&mut tape, source)?;
        Ok(ConditionInput {
            x_mix: tape.value(x_mix).clone(),
            provided,
            mix: source.mix.clone(),
        })
    }

    fn block(
        &self,
        tape: &mut Tape<F>,
        x: Var,
        p: &BlockParams,
        groups: Arc<Groups>,
        dropout: &mut Option<&mut crate::rng::Rng>,
    ) -> Var {
        let ps = &self.params;
        let (w_qkv, b_qkv) = (tape.param(ps, p.w_qkv), tape.param(ps, p.b_qkv));
        let qkv = tape.linear(x, w_qkv, b_qkv);
        let att = tape.attention(qkv, groups, self.config.heads);
        let (w_o, b_o) = (tape.param(ps, p.w_o), tape.param(ps, p.b_o));
        let o = tape.linear(att, w_o, b_o);
        let o = self.dropout(tape, o, dropout);
        let res = tape.add(x, o);
        let (g1, n1) = (tape.param(ps, p.ln1_g), tape.param(ps, p.ln1_b));
        let x1 = tape.layer_norm(res, g1, n1);
        let (w1, b1) = (tape.param(ps, p.ff1_w), tape.param(ps, p.ff1_b));
        let f = tape.linear(x1, w1, b1);
        let f = tape.relu(f);
        let (w2, b2) = (tape.param(ps, p.ff2_w), tape.param(ps, p.ff2_b));
        let f = tape.linear(f, w2, b2);
        let f = self.dropout(tape, f, dropout);
        let res = tape.add(x1, f);
        let (g2, n2) = (tape.param(ps, p.ln2_g), tape.param(ps, p.ln2_b));
        tape.layer_norm(res, g2, n2)
    }

    fn dropout(
        &self,
        tape: &mut Tape<F>,
        x: Var,
        rng: &mut Option<&mut crate::rng::Rng>,
    ) -> Var {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = F::from_f64_lossy(1.0 / (1.0 - p));
                let mask = tape
                    .value(x)
                    .mapv(|_| if rng.random_bool(p) { F::zero() } else { keep });
                tape.mul_const(x, mask)
            }
            _ => x,
        }
    }

    /// Records a forward pass. Passing an RNG enables dropout (training
    /// mode); `None` is the deterministic evaluation mode.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        batch: &DenoiserBatch<F>,
        mut dropout: Option<&mut crate::rng::Rng>,
    ) -> Result<ForwardVars> {
        let cfg = &self.config;
        let (l, c, d) = (cfg.window, cfg.features, cfg.hidden);
        let b = batch.batch_size();
        let tokens = l * c;
        if batch.noisy.dim() != (b * l, c) {
            return Err(Error::Shape(format!(
                "noisy input {:?}, expected ({}, {c}) for {b} windows",
                batch.noisy.dim(),
                b * l
            )));
        }
        if batch.condition.sampled_co.dim() != batch.noisy.dim() {
            return Err(Error::Shape(format!(
                "condition {:?} vs input {:?}",
                batch.condition.sampled_co.dim(),
                batch.noisy.dim()
            )));
        }
        let lay = &self.layout;
        let ps = &self.params;

        let p_k = self.embed_steps(tape, &batch.steps)?;
        let x = tape.input(
            batch
                .noisy
                .as_standard_layout()
                .to_owned()
                .into_shape_with_order((b * tokens, 1))
                .expect("row-major flatten"),
        );
        let (in_w, in_b) = (tape.param(ps, lay.in_w), tape.param(ps, lay.in_b));
        let h = tape.linear(x, in_w, in_b);
        let mut h = tape.add_block_rows(h, p_k, tokens);

        let (x_mix, provided) = self.mix_condition(tape, &batch.condition)?;
        let x_mix = tape.reshape(x_mix, b * tokens, 1);
        // The lift also sees how much of each value is the window's own.
        let mix = batch.condition.mix.as_standard_layout().to_owned();
        let mix = tape.input(mix.into_shape_with_order((b * tokens, 1)).expect("row-major flatten"));
        let lift_in = tape.concat_cols(&[x_mix, mix]);
        let (cw, cb) = (tape.param(ps, lay.cond_w), tape.param(ps, lay.cond_b));
        let lifted = tape.linear(lift_in, cw, cb);
        let provided = Array1::from_iter(provided.iter().copied());
        let cond = tape.scale_rows(lifted, provided);

        let time_index: Vec<usize> = (0..b * tokens).map(|i| (i / c) % l).collect();
        let feature_index: Vec<usize> = (0..b * tokens).map(|i| i % c).collect();
        let time_table = tape.input(self.time_table.clone());
        let over_time = Arc::new(Groups::over_time(b, l, c));
        let over_features = Arc::new(Groups::over_features(b, l, c));

        let mut outputs = Vec::with_capacity(lay.layers.len());
        for layer in &lay.layers {
            let fused_in = match cfg.fusion {
                Fusion::Concat => tape.concat_cols(&[h, cond]),
                Fusion::Add => tape.add(h, cond),
            };
            let (fw, fb) = (tape.param(ps, layer.fuse_w), tape.param(ps, layer.fuse_b));
            let fused = tape.linear(fused_in, fw, fb);
            let with_time = tape.gather_add_rows(fused, time_table, time_index.clone());
            let temporal =
                self.block(tape, with_time, &layer.temporal, over_time.clone(), &mut dropout);
            let fe = tape.param(ps, layer.feature_emb);
            let with_feature = tape.gather_add_rows(temporal, fe, feature_index.clone());
            let inverted = self.block(
                tape,
                with_feature,
                &layer.variable,
                over_features.clone(),
                &mut dropout,
            );
            outputs.push(inverted);
            h = inverted;
        }

        let merged = if outputs.len() == 1 {
            outputs[0]
        } else {
            tape.concat_cols(&outputs)
        };
        let (g, o) = (tape.param(ps, lay.dec_ln_g), tape.param(ps, lay.dec_ln_b));
        let normed = tape.layer_norm(merged, g, o);
        let (w1, b1) = (tape.param(ps, lay.dec_w1), tape.param(ps, lay.dec_b1));
        let hidden = tape.linear(normed, w1, b1);
        let hidden = tape.relu(hidden);
        let (w2, b2) = (tape.param(ps, lay.dec_w2), tape.param(ps, lay.dec_b2));
        let eps = tape.linear(hidden, w2, b2);

        let z = match cfg.pool {
            Pool::Mean => tape.block_mean(h, tokens),
            Pool::Flatten => tape.reshape(h, b, tokens * d),
        };
        Ok(ForwardVars { eps, z })
    }

    /// Evaluation-mode forward returning predicted noise `(B * L, C)` and
    /// the pooled embeddings.
    pub fn predict(&self, batch: &DenoiserBatch<F>) -> Result<(Array2<F>, Array2<F>)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch, None)?;
        let (rows, c) = batch.noisy.dim();
        let eps = tape
            .value(out.eps)
            .clone()
            .into_shape_with_order((rows, c))
            .expect("row-major");
        Ok((eps, tape.value(out.z).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s};

    fn tiny() -> DenoiserConfig {
        DenoiserConfig {
            window: 4,
            features: 3,
            hidden: 8,
            layers: 2,
            heads: 2,
            ff_dim: 8,
            ..Default::default()
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn batch(cfg: &DenoiserConfig, b: usize, seed: u64) -> DenoiserBatch<f64> {
        let rows = b * cfg.window;
        let c = cfg.features;
        let cond_mask = random(rows, c, seed + 1).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let sampled_co = random(rows, c, seed + 2) * &cond_mask;
        let context_mask = random(rows, c, seed + 3).mapv(|v| if v > -0.5 { 1.0 } else { 0.0 });
        let context_co = random(rows, c, seed + 4) * &context_mask;
        let mix = random(rows, c, seed + 5).mapv(|v| (v + 1.0) / 2.0);
        DenoiserBatch {
            noisy: random(rows, c, seed) * &cond_mask.mapv(|m| 1.0 - m),
            steps: (0..b).map(|i| 1 + (i * 7 + seed as usize) % 50).collect(),
            condition: ConditionSource {
                sampled_co,
                cond_mask,
                context_co,
                context_mask,
                mix,
            },
        }
    }

    #[test]
    fn step_bank_at_zero() {
        let bank = step_bank(0, 8).unwrap();
        assert_eq!(&bank[..4], &[0.0; 4]);
        assert_eq!(&bank[4..], &[1.0; 4]);
        assert!(step_bank(3, 7).is_err());
    }

    #[test]
    fn step_bank_two_frequencies() {
        let bank = step_bank(1, 4).unwrap();
        // The oracle reduces 10^4 rad into [0, 2pi) before evaluating.
        let reduced = 1e4f64.rem_euclid(2.0 * std::f64::consts::PI);
        let want = [1f64.sin(), reduced.sin(), 1f64.cos(), reduced.cos()];
        for (g, w) in bank.iter().zip(want) {
            assert!((g - w).abs() < 1e-9);
        }
        for (g, w) in bank.iter().zip([0.841471, -0.305614, 0.540302, -0.952155]) {
            assert!((g - w).abs() < 1e-6, "{g} vs {w}");
        }
    }

    #[test]
    fn embedding_is_deterministic() {
        let net = Denoiser::<f64>::new(tiny(), 3).unwrap();
        let mut t1 = Tape::new();
        let a = net.embed_steps(&mut t1, &[5]).unwrap();
        let mut t2 = Tape::new();
        let b = net.embed_steps(&mut t2, &[5]).unwrap();
        assert_eq!(t1.value(a), t2.value(b));
    }

    #[test]
    fn odd_width_rejected() {
        let cfg = DenoiserConfig {
            hidden: 7,
            heads: 1,
            ..tiny()
        };
        assert!(matches!(
            Denoiser::<f64>::new(cfg, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn condition_mix_extremes() {
        let cfg = tiny();
        let net = Denoiser::<f64>::new(cfg.clone(), 1).unwrap();
        let mut src = batch(&cfg, 1, 10).condition;
        src.mix.fill(1.0);
        let out = net.build_condition(&src).unwrap();
        assert_eq!(out.x_mix, src.sampled_co);
        assert_eq!(out.provided, src.cond_mask);

        src.mix.fill(0.0);
        let out = net.build_condition(&src).unwrap();
        // identity transform at initialization
        assert_eq!(out.x_mix, src.context_co);

        src.mix.fill(0.5);
        let out = net.build_condition(&src).unwrap();
        let want = (&src.sampled_co + &src.context_co) / 2.0;
        for (a, b) in out.x_mix.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn context_map_acts_along_time() {
        let cfg = tiny();
        let mut net = Denoiser::<f64>::new(cfg.clone(), 1).unwrap();
        let (cw, _) = net.context_transform_params();
        // reverse the window's time steps
        let l = cfg.window;
        *net.params_mut().get_mut(cw) = Array2::from_shape_fn((l, l), |(i, j)| f64::from(u8::from(i + j == l - 1)));
        let mut src = batch(&cfg, 2, 20).condition;
        src.mix.fill(0.0);
        let out = net.build_condition(&src).unwrap();
        for b in 0..2 {
            for t in 0..l {
                let r = b * l + t;
                let from = b * l + (l - 1 - t);
                for j in 0..cfg.features {
                    assert_eq!(out.x_mix[[r, j]], src.context_co[[from, j]]);
                }
            }
        }
        // only the window's own conditioning cells carry the blend
        assert_eq!(out.provided, src.cond_mask);
    }

    #[test]
    fn condition_shape_mismatch() {
        let cfg = tiny();
        let net = Denoiser::<f64>::new(cfg.clone(), 1).unwrap();
        let mut src = batch(&cfg, 1, 10).condition;
        src.context_co = Array2::zeros((3, 3));
        assert!(matches!(net.build_condition(&src), Err(Error::Shape(_))));
    }

    #[test]
    fn output_shape_matches_input() {
        for (l, c, d, layers, heads) in [(4, 3, 8, 2, 2), (6, 1, 4, 1, 1), (3, 5, 12, 3, 3)] {
            let cfg = DenoiserConfig {
                window: l,
                features: c,
                hidden: d,
                layers,
                heads,
                ff_dim: 6,
                ..Default::default()
            };
            let net = Denoiser::<f64>::new(cfg.clone(), 2).unwrap();
            let (eps, z) = net.predict(&batch(&cfg, 2, 4)).unwrap();
            assert_eq!(eps.dim(), (2 * l, c));
            assert_eq!(z.dim(), (2, d));
        }
    }

    #[test]
    fn flatten_pool_width() {
        let cfg = DenoiserConfig {
            pool: Pool::Flatten,
            ..tiny()
        };
        let net = Denoiser::<f64>::new(cfg.clone(), 2).unwrap();
        let (_, z) = net.predict(&batch(&cfg, 3, 4)).unwrap();
        assert_eq!(z.dim(), (3, cfg.embedding_width()));
    }

    #[test]
    fn zero_head_predicts_zero() {
        let cfg = tiny();
        let mut net = Denoiser::<f64>::new(cfg.clone(), 2).unwrap();
        for id in net.decoder_params() {
            net.params_mut().get_mut(id).fill(0.0);
        }
        let (eps, _) = net.predict(&batch(&cfg, 2, 4)).unwrap();
        assert!(eps.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn batched_equals_single() {
        let cfg = tiny();
        let net = Denoiser::<f64>::new(cfg.clone(), 5).unwrap();
        let full = batch(&cfg, 3, 8);
        let (eps, z) = net.predict(&full).unwrap();
        let l = cfg.window;
        for i in 0..3 {
            let rows = s![i * l..(i + 1) * l, ..];
            let single = DenoiserBatch {
                noisy: full.noisy.slice(rows).to_owned(),
                steps: vec![full.steps[i]],
                condition: ConditionSource {
                    sampled_co: full.condition.sampled_co.slice(rows).to_owned(),
                    cond_mask: full.condition.cond_mask.slice(rows).to_owned(),
                    context_co: full.condition.context_co.slice(rows).to_owned(),
                    context_mask: full.condition.context_mask.slice(rows).to_owned(),
                    mix: full.condition.mix.slice(rows).to_owned(),
                },
            };
            let (e1, z1) = net.predict(&single).unwrap();
            for (a, b) in e1.iter().zip(eps.slice(rows).iter()) {
                assert!((a - b).abs() < 1e-10);
            }
            for (a, b) in z1.row(0).iter().zip(z.row(i).iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dropout_only_in_training_mode() {
        let cfg = DenoiserConfig {
            dropout: 0.3,
            ..tiny()
        };
        let net = Denoiser::<f64>::new(cfg.clone(), 5).unwrap();
        let b = batch(&cfg, 1, 2);
        let (a, _) = net.predict(&b).unwrap();
        let (a2, _) = net.predict(&b).unwrap();
        assert_eq!(a, a2);
        let mut rng = rng_from_seed(1);
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &b, Some(&mut rng)).unwrap();
        let trained = tape.value(out.eps).clone().into_shape_with_order(a.dim()).unwrap();
        assert_ne!(trained, a);
    }

    #[test]
    fn temporal_encoding_first_row() {
        let te = temporal_encoding(3, 4);
        assert_eq!(te.row(0), array![0.0, 1.0, 0.0, 1.0]);
    }
}
