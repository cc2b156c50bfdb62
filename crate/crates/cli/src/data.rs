//! Configuration resolution and data preparation shared by the commands.

use std::path::{Path, PathBuf};

use mtsci::config::RunConfig;
use mtsci::dataset::{
    apply_mask_sidecar, fit_normalizer, load_series, make_windows, sidecar_name,
    simulate_missing, split_series, write_mask_sidecar, NormStats, SeriesTable, Split, Window,
};
use mtsci::rng::derive_seed;
use mtsci::synthetic::SineMixture;

use crate::args::Common;
use crate::{io_err, CliError, CliResult};

/// Loads the configuration named by `common`, applies `--set` overrides,
/// `MTSCI_SEED`, `--seed` and `--out`, then command-specific tweaks.
pub fn resolve_config(
    common: &Common,
    tweak: impl FnOnce(&mut RunConfig) -> CliResult<()>,
) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    tweak(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

/// Writes the effective configuration as `<command>.config.toml`.
pub fn echo_config(cfg: &RunConfig, dir: &Path, command: &str) -> CliResult<()> {
    let path = dir.join(format!("{command}.config.toml"));
    std::fs::write(&path, cfg.to_toml()?).map_err(io_err(path))
}

/// The configured series: the CSV at `dataset.path`, or the synthetic
/// generator when the path is empty.
pub fn series(cfg: &RunConfig) -> CliResult<SeriesTable> {
    if cfg.dataset.path.is_empty() {
        let s = &cfg.synthetic;
        let gen = SineMixture {
            steps: s.steps,
            features: s.features,
            components: s.components,
            noise: s.noise,
            ..Default::default()
        };
        Ok(gen.generate(s.seed)?)
    } else {
        Ok(load_series(&cfg.dataset.path, &cfg.csv_format()?)?)
    }
}

/// What to do when a split's evaluation-mask sidecar is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Masks {
    /// Write fresh sidecars, refusing to replace existing ones unless forced.
    Simulate { force: bool },
    /// Read existing sidecars, writing any that are missing.
    ReadOrCreate,
    /// Read existing sidecars; a missing one is an error.
    Require,
}

/// Raw-unit windows of every split with their evaluation masks, plus the
/// normalizer fit on the training split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub feature_names: Vec<String>,
    pub norm: NormStats,
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
}

impl Prepared {
    pub fn get(&self, split: Split) -> &[Window] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }
}

pub fn sidecar_path(cfg: &RunConfig, dir: &Path, split: Split) -> CliResult<PathBuf> {
    Ok(dir.join(sidecar_name(split, &cfg.missing_pattern()?, cfg.missing.seed)))
}

fn split_stream(split: Split) -> u64 {
    match split {
        Split::Train => 1,
        Split::Val => 2,
        Split::Test => 3,
    }
}

pub fn prepare(cfg: &RunConfig, dir: &Path, masks: Masks) -> CliResult<Prepared> {
    let series = series(cfg)?;
    let splits = split_series(&series, &cfg.split_spec()?)?;
    let norm = fit_normalizer(&splits.train)?;
    let pattern = cfg.missing_pattern()?;
    let mut out = Vec::with_capacity(3);
    for split in Split::ALL {
        let windows = make_windows(splits.get(split), cfg.dataset.window, cfg.dataset.stride)?;
        let path = sidecar_path(cfg, dir, split)?;
        let exists = path.exists();
        let windows = match masks {
            Masks::Simulate { force: false } if exists => return Err(CliError::Exists(path)),
            Masks::Require if !exists => {
                return Err(CliError::Usage(format!(
                    "missing mask sidecar {}; run `mtsci simulate` first",
                    path.display()
                )))
            }
            Masks::ReadOrCreate | Masks::Require if exists => apply_mask_sidecar(&path, &windows)?,
            _ => {
                let seed = derive_seed(cfg.missing.seed, split_stream(split), 0);
                let masked = simulate_missing(&windows, &pattern, seed)?;
                write_mask_sidecar(&path, &masked)?;
                log::info!("wrote {}", path.display());
                masked
            }
        };
        out.push(windows);
    }
    let test = out.pop().unwrap_or_default();
    let val = out.pop().unwrap_or_default();
    let train = out.pop().unwrap_or_default();
    Ok(Prepared {
        feature_names: series.feature_names,
        norm,
        train,
        val,
        test,
    })
}

/// Maps raw windows to normalized units; unobserved cells become zero.
pub fn normalize(windows: &[Window], norm: &NormStats) -> Vec<Window> {
    windows
        .iter()
        .map(|w| {
            let mut values = w.values.clone();
            for ((t, j), v) in values.indexed_iter_mut() {
                *v = if w.obs_mask[[t, j]] {
                    norm.apply_value(*v, j)
                } else {
                    0.0
                };
            }
            Window {
                values,
                ..w.clone()
            }
        })
        .collect()
}
