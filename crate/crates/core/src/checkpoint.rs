//! Versioned JSON checkpoints.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::NormStats;
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::DiffusionSchedule;
use crate::tape::Params;
use crate::training::{Adam, EpochRecord, TrainState};
use crate::{Error, Real, Result};

pub const CHECKPOINT_FORMAT: &str = "mtsci-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A named matrix stored in double precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

fn to_tensors<F: Real>(params: &Params<F>) -> Vec<Tensor> {
    params
        .iter()
        .map(|(_, name, t)| Tensor {
            name: name.to_string(),
            shape: [t.nrows(), t.ncols()],
            data: t.iter().map(|v| v.as_f64()).collect(),
        })
        .collect()
}

fn from_tensors<F: Real>(tensors: &[Tensor]) -> Result<Params<F>> {
    let mut p = Params::default();
    for t in tensors {
        let a = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone()).map_err(|_| {
            Error::CheckpointMismatch(format!(
                "tensor {} holds {} values for shape {:?}",
                t.name,
                t.data.len(),
                t.shape
            ))
        })?;
        p.add(t.name.clone(), a.mapv(F::from_f64_lossy));
    }
    Ok(p)
}

fn moments<F: Real>(like: &Params<F>, tensors: &[Tensor]) -> Result<Vec<Array2<F>>> {
    let mut p = like.clone();
    p.load_from(&from_tensors(tensors)?)?;
    Ok(p.tensors_mut().to_vec())
}

/// What is needed to continue training where a run stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeState {
    pub last_params: Vec<Tensor>,
    pub adam_step: u64,
    pub adam_first: Vec<Tensor>,
    pub adam_second: Vec<Tensor>,
    pub stale_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub model: DenoiserConfig,
    pub normalizer: NormStats,
    pub schedule: DiffusionSchedule,
    /// Best-validation parameters, used for imputation.
    pub params: Vec<Tensor>,
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
    pub epochs_completed: usize,
    pub history: Vec<EpochRecord>,
    pub resume: Option<ResumeState>,
}

impl Checkpoint {
    pub fn from_state<F: Real>(
        config: &RunConfig,
        model: &Denoiser<F>,
        normalizer: &NormStats,
        schedule: &DiffusionSchedule,
        state: &TrainState<F>,
    ) -> Self {
        let as_params = |ts: &[Array2<F>]| {
            let mut p = model.params().clone();
            p.tensors_mut().clone_from_slice(ts);
            to_tensors(&p)
        };
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            model: model.config().clone(),
            normalizer: normalizer.clone(),
            schedule: schedule.clone(),
            params: to_tensors(&state.best_params),
            best_epoch: (!state.history.is_empty()).then_some(state.best_epoch),
            best_val: state.best_val.is_finite().then_some(state.best_val),
            epochs_completed: state.epochs_completed,
            history: state.history.clone(),
            resume: Some(ResumeState {
                last_params: to_tensors(model.params()),
                adam_step: state.optimizer.step,
                adam_first: as_params(&state.optimizer.first),
                adam_second: as_params(&state.optimizer.second),
                stale_epochs: state.stale_epochs,
            }),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::CheckpointMismatch(format!(
                "{} is not a checkpoint",
                path.display()
            )));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(u64::from(CHECKPOINT_VERSION)) {
            return Err(Error::CheckpointMismatch(format!(
                "{} has version {version:?}, expected {CHECKPOINT_VERSION}",
                path.display()
            )));
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Fails unless `config` describes the same network and schedule.
    pub fn check_compatible(&self, config: &RunConfig) -> Result<()> {
        let want = config.model_config(self.model.features);
        if want != self.model {
            return Err(Error::CheckpointMismatch(format!(
                "model config differs: checkpoint {:?}, run {:?}",
                self.model, want
            )));
        }
        if config.diffusion != self.config.diffusion {
            return Err(Error::CheckpointMismatch(format!(
                "diffusion config differs: checkpoint {:?}, run {:?}",
                self.config.diffusion, config.diffusion
            )));
        }
        if config.train.objective != self.config.train.objective {
            return Err(Error::CheckpointMismatch(
                "train.objective differs from the checkpoint".into(),
            ));
        }
        Ok(())
    }

    /// The network with the best-validation parameters.
    pub fn model<F: Real>(&self) -> Result<Denoiser<F>> {
        let mut model = Denoiser::new(self.model.clone(), 0)?;
        model.params_mut().load_from(&from_tensors(&self.params)?)?;
        Ok(model)
    }

    /// The network at its last-epoch parameters plus optimizer state.
    pub fn resume<F: Real>(&self) -> Result<(Denoiser<F>, TrainState<F>)> {
        let r = self.resume.as_ref().ok_or_else(|| {
            Error::CheckpointMismatch("checkpoint carries no resume state".into())
        })?;
        let mut model = Denoiser::<F>::new(self.model.clone(), 0)?;
        model.params_mut().load_from(&from_tensors(&r.last_params)?)?;
        let best = self.model::<F>()?.params().clone();
        let mut optimizer = Adam::new(model.params());
        optimizer.step = r.adam_step;
        optimizer.first = moments(model.params(), &r.adam_first)?;
        optimizer.second = moments(model.params(), &r.adam_second)?;
        let state = TrainState {
            epochs_completed: self.epochs_completed,
            optimizer,
            best_params: best,
            best_val: self.best_val.unwrap_or(f64::INFINITY),
            best_epoch: self.best_epoch.unwrap_or(0),
            history: self.history.clone(),
            stale_epochs: r.stale_epochs,
        };
        Ok((model, state))
    }
}
