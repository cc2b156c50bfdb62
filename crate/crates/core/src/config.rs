//! Run configuration: a typed TOML tree with includes and overrides.
//!
//! A file may name other files under a top-level `include` key (a string or
//! a list, relative to the including file). Included files are merged first,
//! later tables overriding earlier ones key by key. Dotted `key=value`
//! overrides apply on top, and the `MTSCI_SEED` environment variable replaces
//! every seed. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::dataset::{CsvFormat, MissingPattern, SplitSpec};
use crate::denoiser::{DenoiserConfig, Fusion, Pool};
use crate::diffusion::{DiffusionSchedule, ScheduleShape};
use crate::masking::{MaskKind, MaskStrategy};
use crate::sampler::SamplerConfig;
use crate::training::{Objective, Reduction, TrainConfig};
use crate::{Error, Result};

/// Environment variable that overrides every seed in the configuration.
pub const SEED_ENV: &str = "MTSCI_SEED";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub synthetic: SyntheticSection,
    pub missing: MissingSection,
    pub mask: MaskSection,
    pub diffusion: DiffusionSection,
    pub model: ModelSection,
    pub cond: CondSection,
    pub contrastive: ContrastiveSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub infer: InferSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Fractions,
    Dates,
    Ett,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Series CSV; empty means generate the synthetic series.
    pub path: String,
    /// Label used in reports.
    pub name: String,
    pub window: usize,
    pub stride: usize,
    pub missing_token: String,
    pub delimiter: String,
    pub split: SplitKind,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// `[start, end)` timestamps for `split = "dates"`.
    pub train_dates: Vec<String>,
    pub val_dates: Vec<String>,
    pub test_dates: Vec<String>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            path: String::new(),
            name: "synthetic".into(),
            window: crate::dataset::DEFAULT_WINDOW,
            stride: crate::dataset::DEFAULT_WINDOW,
            missing_token: String::new(),
            delimiter: ",".into(),
            split: SplitKind::Fractions,
            train_fraction: 0.7,
            val_fraction: 0.1,
            test_fraction: 0.2,
            train_dates: Vec::new(),
            val_dates: Vec::new(),
            test_dates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub steps: usize,
    pub features: usize,
    pub components: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            steps: 2000 * crate::dataset::DEFAULT_WINDOW,
            features: 5,
            components: 3,
            noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Point,
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissingSection {
    pub pattern: PatternKind,
    pub ratio: f64,
    pub block_base_ratio: f64,
    pub block_start_prob: f64,
    /// 0 means `L / 2`.
    pub block_min_len: usize,
    /// 0 means `2 L`.
    pub block_max_len: usize,
    pub seed: u64,
}

impl Default for MissingSection {
    fn default() -> Self {
        Self {
            pattern: PatternKind::Point,
            ratio: 0.2,
            block_base_ratio: 0.05,
            block_start_prob: 0.0015,
            block_min_len: 0,
            block_max_len: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSection {
    pub kind: MaskKind,
    pub point_ratio_max: f64,
    pub block_prob_max: f64,
}

impl Default for MaskSection {
    fn default() -> Self {
        Self {
            kind: MaskKind::Point,
            point_ratio_max: 1.0,
            block_prob_max: crate::masking::BLOCK_PROB_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    #[serde(rename = "K")]
    pub steps: usize,
    pub beta_1: f64,
    #[serde(rename = "beta_K")]
    pub beta_k: f64,
    pub shape: ScheduleShape,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_1: 1e-4,
            beta_k: 0.2,
            shape: ScheduleShape::Quadratic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub precision: Precision,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            heads: 8,
            ff_dim: 64,
            dropout: 0.0,
            precision: Precision::F32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CondSection {
    pub fusion: Fusion,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveSection {
    pub pool: Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub patience: usize,
    pub seed: u64,
    pub intra_on: bool,
    pub inter_on: bool,
    pub objective: Objective,
    /// 0 means no cap.
    pub max_batches: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lambda: t.lambda,
            tau: t.tau,
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            lr_decay_epochs: t.lr_decay_epochs,
            lr_decay_factor: t.lr_decay_factor,
            patience: t.patience,
            seed: t.seed,
            intra_on: t.intra_on,
            inter_on: t.inter_on,
            objective: t.objective,
            max_batches: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub both_views: bool,
    pub reduction: Reduction,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            both_views: true,
            reduction: Reduction::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    pub samples: usize,
    pub seed: u64,
    pub batch_windows: usize,
}

impl Default for InferSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            samples: s.samples,
            seed: s.seed,
            batch_windows: s.batch_windows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub mape_floor: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mape_floor: crate::metrics::DEFAULT_MAPE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

/// Named consistency ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Full,
    WoIntra,
    WoInter,
    WoCons,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "mtsci" => Ok(Ablation::Full),
            "wo_intra" => Ok(Ablation::WoIntra),
            "wo_inter" => Ok(Ablation::WoInter),
            "wo_cons" => Ok(Ablation::WoCons),
            other => Err(Error::Config(format!(
                "unknown ablation {other:?}; expected full, wo_intra, wo_inter or wo_cons"
            ))),
        }
    }
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

/// Recursively merges `over` into `base`; tables merge key by key, anything
/// else replaces.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn load_tree(path: &Path, depth: usize) -> Result<Table> {
    if depth > 16 {
        return Err(config_err(path, "include nesting too deep"));
    }
    let text = std::fs::read_to_string(path).map_err(|e| config_err(path, e))?;
    let mut table: Table = text.parse().map_err(|e| config_err(path, e))?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s],
        Some(Value::Array(a)) => a
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                other => Err(config_err(path, format!("include entry {other} is not a path"))),
            })
            .collect::<Result<_>>()?,
        Some(other) => return Err(config_err(path, format!("include = {other} is not a path"))),
    };
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut merged = Table::new();
    for inc in includes {
        let inc_path: PathBuf = dir.join(inc);
        merge(&mut merged, load_tree(&inc_path, depth + 1)?);
    }
    merge(&mut merged, table);
    Ok(merged)
}

/// Parses an override value as a TOML literal, falling back to a string.
fn parse_override_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    doc.parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("override {key:?}: {p} is not a table"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Loads `path` (or defaults when `None`), applies `key=value`
    /// overrides, then the seed environment variable.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let env_seed = std::env::var(SEED_ENV).ok();
        Self::load_with_seed(path, overrides, env_seed.as_deref())
    }

    /// As [`RunConfig::load`] with the seed override passed explicitly.
    pub fn load_with_seed(
        path: Option<&Path>,
        overrides: &[String],
        seed_override: Option<&str>,
    ) -> Result<Self> {
        let mut tree = match path {
            Some(p) => load_tree(p, 0)?,
            None => Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_dotted(&mut tree, k.trim(), parse_override_value(v.trim()))?;
        }
        let mut cfg: RunConfig = Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim().to_string()))?;
        if let Some(raw) = seed_override {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }

    /// Replaces every seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.synthetic.seed = seed;
        self.missing.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.infer.seed = seed;
    }

    pub fn apply_ablation(&mut self, ablation: Ablation) {
        let (intra, inter) = match ablation {
            Ablation::Full => (true, true),
            Ablation::WoIntra => (false, true),
            Ablation::WoInter => (true, false),
            Ablation::WoCons => (false, false),
        };
        self.train.intra_on = intra;
        self.train.inter_on = inter;
        if !intra {
            // Without the contrastive term the second view only duplicates
            // the denoising task.
            self.loss.both_views = false;
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.window < 2 {
            return Err(Error::Config("dataset.window must be at least 2".into()));
        }
        if self.dataset.stride == 0 {
            return Err(Error::Config("dataset.stride must be positive".into()));
        }
        self.split_spec()?;
        self.missing_pattern()?.validate()?;
        self.mask_strategy().validate()?;
        self.schedule()?;
        self.train_config().validate()?;
        if self.infer.samples == 0 {
            return Err(Error::Config("infer.samples must be at least 1".into()));
        }
        if !(self.eval.mape_floor >= 0.0) {
            return Err(Error::Config("eval.mape_floor must be non-negative".into()));
        }
        Ok(())
    }

    pub fn csv_format(&self) -> Result<CsvFormat> {
        let mut chars = self.dataset.delimiter.chars();
        let delimiter = match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii() => c,
            _ => {
                return Err(Error::Config(format!(
                    "dataset.delimiter {:?} must be one ASCII character",
                    self.dataset.delimiter
                )))
            }
        };
        Ok(CsvFormat {
            missing_token: (!self.dataset.missing_token.is_empty())
                .then(|| self.dataset.missing_token.clone()),
            delimiter: Some(delimiter),
        })
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        let d = &self.dataset;
        match d.split {
            SplitKind::Fractions => Ok(SplitSpec::Fractions {
                train: d.train_fraction,
                val: d.val_fraction,
                test: d.test_fraction,
            }),
            SplitKind::Ett => Ok(SplitSpec::ett()),
            SplitKind::Dates => {
                let range = |key: &str, v: &[String]| -> Result<_> {
                    let parse = |s: &String| {
                        crate::dataset::parse_timestamp(s).ok_or_else(|| {
                            Error::Config(format!("dataset.{key}: bad timestamp {s:?}"))
                        })
                    };
                    match v {
                        [a, b] => Ok((parse(a)?, parse(b)?)),
                        _ => Err(Error::Config(format!(
                            "dataset.{key} needs [start, end]"
                        ))),
                    }
                };
                Ok(SplitSpec::Dates {
                    train: range("train_dates", &d.train_dates)?,
                    val: range("val_dates", &d.val_dates)?,
                    test: range("test_dates", &d.test_dates)?,
                })
            }
        }
    }

    pub fn missing_pattern(&self) -> Result<MissingPattern> {
        let m = &self.missing;
        let l = self.dataset.window;
        let pattern = match m.pattern {
            PatternKind::Point => MissingPattern::Point { ratio: m.ratio },
            PatternKind::Block => MissingPattern::Block {
                base_ratio: m.block_base_ratio,
                start_prob: m.block_start_prob,
                min_len: if m.block_min_len == 0 { (l / 2).max(1) } else { m.block_min_len },
                max_len: if m.block_max_len == 0 { 2 * l } else { m.block_max_len },
            },
        };
        pattern.validate()?;
        Ok(pattern)
    }

    pub fn mask_strategy(&self) -> MaskStrategy {
        let l = self.dataset.window;
        match self.mask.kind {
            MaskKind::Point => MaskStrategy {
                ratio_max: self.mask.point_ratio_max,
                ..MaskStrategy::point()
            },
            MaskKind::Block => MaskStrategy {
                ratio_max: self.mask.block_prob_max,
                ..MaskStrategy::block(l)
            },
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        let d = &self.diffusion;
        DiffusionSchedule::build(d.steps, d.beta_1, d.beta_k, d.shape)
    }

    pub fn model_config(&self, features: usize) -> DenoiserConfig {
        let m = &self.model;
        DenoiserConfig {
            window: self.dataset.window,
            features,
            hidden: m.hidden,
            layers: m.layers,
            heads: m.heads,
            ff_dim: m.ff_dim,
            dropout: m.dropout,
            fusion: self.cond.fusion,
            pool: self.contrastive.pool,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lambda: t.lambda,
            tau: t.tau,
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            lr_decay_epochs: t.lr_decay_epochs.clone(),
            lr_decay_factor: t.lr_decay_factor,
            patience: t.patience,
            seed: t.seed,
            intra_on: t.intra_on,
            inter_on: t.inter_on,
            both_views: self.loss.both_views,
            reduction: self.loss.reduction,
            objective: t.objective,
            max_batches: (t.max_batches > 0).then_some(t.max_batches),
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            samples: self.infer.samples,
            seed: self.infer.seed,
            batch_windows: self.infer.batch_windows,
            objective: self.train.objective,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(text.contains("beta_K"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::load_with_seed(None, &["train.lamda=0.5".into()], None).unwrap_err();
        assert!(err.to_string().contains("lamda"), "{err}");
    }

    #[test]
    fn overrides_and_seed_env() {
        let cfg = RunConfig::load_with_seed(
            None,
            &[
                "train.lambda=0.5".into(),
                "diffusion.shape=linear".into(),
                "dataset.name=weather".into(),
            ],
            Some("42"),
        )
        .unwrap();
        assert_eq!(cfg.train.lambda, 0.5);
        assert_eq!(cfg.diffusion.shape, ScheduleShape::Linear);
        assert_eq!(cfg.dataset.name, "weather");
        assert_eq!((cfg.train.seed, cfg.infer.seed, cfg.missing.seed), (42, 42, 42));
    }

    #[test]
    fn includes_merge_in_order() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("base.toml"),
            "[train]\nlambda = 0.3\nepochs = 7\n[model]\nhidden = 32\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("run.toml"),
            "include = \"base.toml\"\n[train]\nepochs = 9\n",
        )
        .unwrap();
        let cfg = RunConfig::load_with_seed(Some(&dir.path().join("run.toml")), &[], None).unwrap();
        assert_eq!(cfg.train.lambda, 0.3);
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.model.hidden, 32);
    }

    #[test]
    fn ablation_presets() {
        let mut cfg = RunConfig::default();
        cfg.apply_ablation("wo_cons".parse().unwrap());
        assert!(!cfg.train.intra_on && !cfg.train.inter_on);
        let mut cfg = RunConfig::default();
        cfg.apply_ablation(Ablation::WoInter);
        assert!(cfg.train.intra_on && !cfg.train.inter_on && cfg.loss.both_views);
        assert!("nope".parse::<Ablation>().is_err());
    }

    #[test]
    fn out_of_range_ratio_names_key() {
        let cfg = RunConfig::load_with_seed(None, &["missing.ratio=1.5".into()], None).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("missing.ratio"), "{err}");
    }
}
