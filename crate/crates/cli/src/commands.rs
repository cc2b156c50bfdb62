use std::path::PathBuf;

use mtsci::checkpoint::Checkpoint;
use mtsci::config::{Ablation, PatternKind, Precision, RunConfig};
use mtsci::dataset::{pair_with_context, Split, Window};
use mtsci::denoiser::Denoiser;
use mtsci::metrics::{
    crps_from_quantiles, linear_interp_baseline, mean_baseline, point_scores, ScoreReport,
};
use mtsci::sampler::{impute_dataset, ImputationResult, REPORT_QUANTILES};
use mtsci::training::{train as fit, EpochRecord};
use mtsci::Real;

use crate::args::{Common, EvaluateArgs, ImputeArgs, Method, PatternArg, SimulateArgs, TrainArgs};
use crate::data::{echo_config, normalize, out_dir, prepare, resolve_config, Masks, Prepared};
use crate::table::{
    read_imputation, with_suffix, write_imputation, write_report, write_train_log, ImputationRow,
};
use crate::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Writes evaluation-mask sidecars for every split; returns their paths.
pub fn simulate(args: &SimulateArgs) -> CliResult<Vec<PathBuf>> {
    let cfg = resolve_config(&args.common, |cfg| {
        if let Some(p) = args.pattern {
            cfg.missing.pattern = match p {
                PatternArg::Point => PatternKind::Point,
                PatternArg::Block => PatternKind::Block,
            };
        }
        if let Some(r) = args.ratio {
            cfg.missing.ratio = r;
        }
        Ok(())
    })?;
    let dir = out_dir(&cfg)?;
    echo_config(&cfg, &dir, "simulate")?;
    let prepared = prepare(
        &cfg,
        &dir,
        Masks::Simulate {
            force: args.common.force,
        },
    )?;
    for split in Split::ALL {
        let windows = prepared.get(split);
        let (hidden, observed) = windows.iter().fold((0, 0), |(h, o), w| {
            (
                h + w.eval_mask.iter().filter(|&&m| m).count(),
                o + w.obs_mask.iter().filter(|&&m| m).count(),
            )
        });
        log::info!(
            "{split}: {} windows, {hidden} of {observed} observed cells held out",
            windows.len()
        );
    }
    Split::ALL
        .iter()
        .map(|&s| crate::data::sidecar_path(&cfg, &dir, s))
        .collect()
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub history: Vec<EpochRecord>,
}

pub fn train(args: &TrainArgs) -> CliResult<TrainSummary> {
    let cfg = resolve_config(&args.common, |cfg| {
        if let Some(a) = &args.ablation {
            cfg.apply_ablation(a.parse::<Ablation>()?);
        }
        if let Some(e) = args.epochs {
            cfg.train.epochs = e;
        }
        Ok(())
    })?;
    match cfg.model.precision {
        Precision::F32 => train_as::<f32>(&cfg, args),
        Precision::F64 => train_as::<f64>(&cfg, args),
    }
}

fn train_as<F: Real>(cfg: &RunConfig, args: &TrainArgs) -> CliResult<TrainSummary> {
    let dir = out_dir(cfg)?;
    echo_config(cfg, &dir, "train")?;
    let prepared = prepare(cfg, &dir, Masks::ReadOrCreate)?;
    let schedule = cfg.schedule()?;
    let (mut model, state, norm) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_compatible(cfg)?;
            let (model, state) = ck.resume::<F>()?;
            log::info!("resuming after epoch {}", state.epochs_completed);
            (model, Some(state), ck.normalizer)
        }
        None => {
            let model = Denoiser::<F>::new(cfg.model_config(prepared.num_features()), cfg.model.seed)?;
            (model, None, prepared.norm.clone())
        }
    };
    let train_windows = normalize(&prepared.train, &norm);
    let val_windows = normalize(&prepared.val, &norm);
    let pairs = pair_with_context(&train_windows);
    let log_path = dir.join(TRAIN_LOG_FILE);
    let mut history: Vec<EpochRecord> = state.as_ref().map(|s| s.history.clone()).unwrap_or_default();
    write_train_log(&log_path, &history)?;
    let outcome = fit(
        &mut model,
        &schedule,
        &pairs,
        &val_windows,
        &cfg.mask_strategy(),
        &cfg.train_config(),
        state,
        |record| {
            history.push(record.clone());
            if let Err(e) = write_train_log(&log_path, &history) {
                log::warn!("could not update {}: {e}", log_path.display());
            }
        },
    )?;
    let ck = Checkpoint::from_state(cfg, &model, &norm, &schedule, &outcome.state);
    let path = dir.join(CHECKPOINT_FILE);
    ck.save(&path)?;
    log::info!(
        "wrote {} ({} epochs, best epoch {:?})",
        path.display(),
        outcome.state.epochs_completed,
        ck.best_epoch
    );
    Ok(TrainSummary {
        checkpoint: path,
        log: log_path,
        history: outcome.state.history,
    })
}

/// Imputes one split and writes the imputation CSV; returns its path.
pub fn impute(args: &ImputeArgs) -> CliResult<PathBuf> {
    let cfg = resolve_config(&args.common, |cfg| {
        if let Some(s) = args.samples {
            cfg.infer.samples = s;
        }
        Ok(())
    })?;
    let dir = out_dir(&cfg)?;
    echo_config(&cfg, &dir, "impute")?;
    let split: Split = args.split.into();
    let output = args
        .output
        .clone()
        .unwrap_or_else(|| dir.join(format!("imputation.{}.csv", args.method.label())));

    let (prepared, ck) = match args.method {
        Method::Mtsci => {
            let path = args
                .checkpoint
                .clone()
                .unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
            let ck = Checkpoint::load(&path)?;
            ck.check_compatible(&cfg)?;
            (prepare(&cfg, &dir, Masks::ReadOrCreate)?, Some(ck))
        }
        _ => (prepare(&cfg, &dir, Masks::ReadOrCreate)?, None),
    };
    let raw = prepared.get(split);
    let rows = match (args.method, ck) {
        (Method::Mtsci, Some(ck)) => {
            if ck.model.features != prepared.num_features() {
                return Err(CliError::Core(mtsci::Error::CheckpointMismatch(format!(
                    "checkpoint expects {} features, data has {}",
                    ck.model.features,
                    prepared.num_features()
                ))));
            }
            let results = match ck.config.model.precision {
                Precision::F32 => sample::<f32>(&cfg, &ck, raw, &args.common)?,
                Precision::F64 => sample::<f64>(&cfg, &ck, raw, &args.common)?,
            };
            raw.iter()
                .zip(&results)
                .flat_map(|(w, r)| model_rows(w, r))
                .collect::<Vec<_>>()
        }
        (method, _) => {
            let means = &prepared.norm.mean;
            raw.iter()
                .flat_map(|w| {
                    let est = match method {
                        Method::Linear => linear_interp_baseline(w, means),
                        _ => mean_baseline(w, means),
                    };
                    baseline_rows(w, &est)
                })
                .collect()
        }
    };
    write_imputation(&output, &rows)?;
    log::info!("wrote {} ({} rows)", output.display(), rows.len());
    Ok(output)
}

fn sample<F: Real>(
    cfg: &RunConfig,
    ck: &Checkpoint,
    raw: &[Window],
    common: &Common,
) -> CliResult<Vec<ImputationResult>> {
    let model = ck.model::<F>()?;
    let windows = normalize(raw, &ck.normalizer);
    let scfg = cfg.sampler_config();
    let total = windows.len();
    let progress = |done: usize, total: usize| log::info!("imputed {done}/{total} windows");
    if common.deterministic || common.workers <= 1 {
        return Ok(impute_dataset(&model, &ck.schedule, &windows, &ck.normalizer, &scfg, progress)?);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.workers)
        .build()
        .map_err(|e| CliError::Usage(format!("--workers {}: {e}", common.workers)))?;
    let out = pool.install(|| {
        mtsci::sampler::impute_dataset_parallel(&model, &ck.schedule, &windows, &ck.normalizer, &scfg)
    })?;
    log::info!("imputed {total} windows");
    Ok(out)
}

fn truth(w: &Window, t: usize, j: usize) -> Option<f64> {
    w.obs_mask[[t, j]].then(|| w.values[[t, j]])
}

fn model_rows(w: &Window, r: &ImputationResult) -> Vec<ImputationRow> {
    let cond = w.cond_mask();
    let qs: Vec<_> = REPORT_QUANTILES.iter().map(|&q| r.quantile(q)).collect();
    let (l, c) = w.values.dim();
    let mut rows = Vec::with_capacity(l * c);
    for t in 0..l {
        for j in 0..c {
            let observed = cond[[t, j]];
            let pick = |v: f64| if observed { w.values[[t, j]] } else { v };
            rows.push(ImputationRow {
                window_start: w.start_index,
                t,
                feature: j,
                observed_flag: u8::from(observed),
                target_flag: u8::from(r.target_mask[[t, j]]),
                truth_if_known: truth(w, t, j),
                point_estimate: pick(r.point_estimate[[t, j]]),
                q05: pick(qs[0][[t, j]]),
                q25: pick(qs[1][[t, j]]),
                q50: pick(qs[2][[t, j]]),
                q75: pick(qs[3][[t, j]]),
                q95: pick(qs[4][[t, j]]),
            });
        }
    }
    rows
}

fn baseline_rows(w: &Window, est: &ndarray::Array2<f64>) -> Vec<ImputationRow> {
    let cond = w.cond_mask();
    let (l, c) = w.values.dim();
    let mut rows = Vec::with_capacity(l * c);
    for t in 0..l {
        for j in 0..c {
            let v = est[[t, j]];
            rows.push(ImputationRow {
                window_start: w.start_index,
                t,
                feature: j,
                observed_flag: u8::from(cond[[t, j]]),
                target_flag: u8::from(!cond[[t, j]]),
                truth_if_known: truth(w, t, j),
                point_estimate: v,
                q05: v,
                q25: v,
                q50: v,
                q75: v,
                q95: v,
            });
        }
    }
    rows
}

/// Scores an imputation file on the held-out cells of a split.
pub fn evaluate(args: &EvaluateArgs) -> CliResult<ScoreReport> {
    let cfg = resolve_config(&args.common, |_| Ok(()))?;
    let dir = out_dir(&cfg)?;
    echo_config(&cfg, &dir, "evaluate")?;
    let prepared: Prepared = prepare(&cfg, &dir, Masks::Require)?;
    let predictions = read_imputation(&args.imputation)?;
    let mut truth = Vec::new();
    let mut point = Vec::new();
    let mut quantiles: Vec<Vec<f64>> = vec![Vec::new(); REPORT_QUANTILES.len()];
    for w in prepared.get(args.split.into()) {
        for ((t, j), &held_out) in w.eval_mask.indexed_iter() {
            if !held_out {
                continue;
            }
            let key = (w.start_index, t, j);
            let row = predictions.get(&key).ok_or_else(|| {
                CliError::Join(format!("window_start={}, t={t}, feature={j}", w.start_index))
            })?;
            truth.push(w.values[[t, j]]);
            point.push(row.point_estimate);
            for (dst, q) in quantiles.iter_mut().zip(row.quantiles()) {
                dst.push(q);
            }
        }
    }
    let scores = point_scores(&truth, &point, cfg.eval.mape_floor)?;
    let crps = crps_from_quantiles(&truth, &quantiles, &REPORT_QUANTILES)?;
    let label = args.label.clone().unwrap_or_else(|| {
        args.imputation
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "imputation".into())
    });
    let pattern = cfg.missing_pattern()?;
    let report = ScoreReport::new(
        [&cfg.dataset.name, pattern.name(), &label],
        cfg.missing.seed,
        scores,
        crps,
    );
    let prefix = args
        .report
        .clone()
        .unwrap_or_else(|| dir.join(format!("report.{label}")));
    write_report(&prefix, &report)?;
    log::info!(
        "{label}: MAE {:.5} RMSE {:.5} CRPS {:?} over {} cells -> {}",
        report.mae,
        report.rmse,
        report.crps,
        report.n_cells,
        with_suffix(&prefix, "json").display()
    );
    Ok(report)
}
