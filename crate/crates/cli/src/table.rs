//! CSV and JSON artifacts.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mtsci::metrics::ScoreReport;
use mtsci::training::EpochRecord;

use crate::{io_err, CliResult};

/// One cell of an imputed window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationRow {
    pub window_start: usize,
    pub t: usize,
    pub feature: usize,
    /// 1 when the cell conditioned the imputation.
    pub observed_flag: u8,
    /// 1 when the cell was imputed.
    pub target_flag: u8,
    /// Ground truth where the series has it (including held-out cells).
    pub truth_if_known: Option<f64>,
    pub point_estimate: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

impl ImputationRow {
    pub fn quantiles(&self) -> [f64; 5] {
        [self.q05, self.q25, self.q50, self.q75, self.q95]
    }
}

pub type CellKey = (usize, usize, usize);

pub fn write_imputation(path: &Path, rows: &[ImputationRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_imputation(path: &Path) -> CliResult<HashMap<CellKey, ImputationRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for row in r.deserialize() {
        let row: ImputationRow = row?;
        out.insert((row.window_start, row.t, row.feature), row);
    }
    Ok(out)
}

/// Writes the epoch log, one row per record.
pub fn write_train_log(path: &Path, records: &[EpochRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// `prefix` with `.ext` appended (not replacing any existing extension).
pub fn with_suffix(prefix: &Path, ext: &str) -> std::path::PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    s.into()
}

pub fn write_report(prefix: &Path, report: &ScoreReport) -> CliResult<()> {
    let json = with_suffix(prefix, "json");
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(&json, text + "\n").map_err(io_err(&json))?;
    let csv_path = with_suffix(prefix, "csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.serialize(report)?;
    w.flush().map_err(io_err(csv_path))?;
    Ok(())
}
