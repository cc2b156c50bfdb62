//! Series loading, splitting, normalization, windowing and evaluation-mask
//! simulation.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use ndarray::{s, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

/// Standard deviation floor for degenerate (constant) features.
pub const STD_FLOOR: f64 = 1e-8;

/// Window length used throughout the benchmarks.
pub const DEFAULT_WINDOW: usize = 24;

/// A multivariate series with its native observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    /// `(num_timesteps, C)`; entries where `native_mask` is false are ignored.
    pub values: Array2<f64>,
    pub native_mask: Array2<bool>,
    pub timestamps: Vec<NaiveDateTime>,
    pub feature_names: Vec<String>,
}

impl SeriesTable {
    /// Builds a table and validates shapes and timestamp regularity.
    pub fn new(
        values: Array2<f64>,
        native_mask: Array2<bool>,
        timestamps: Vec<NaiveDateTime>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if values.dim() != native_mask.dim() {
            return Err(Error::Shape(format!(
                "values {:?} vs mask {:?}",
                values.dim(),
                native_mask.dim()
            )));
        }
        if timestamps.len() != values.nrows() {
            return Err(Error::Shape(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                values.nrows()
            )));
        }
        if feature_names.len() != values.ncols() {
            return Err(Error::Shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                values.ncols()
            )));
        }
        validate_timestamps(&timestamps)?;
        Ok(Self {
            values,
            native_mask,
            timestamps,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn num_features(&self) -> usize {
        self.values.ncols()
    }

    /// Contiguous row range `[start, end)` as a new table.
    pub fn slice_rows(&self, start: usize, end: usize) -> SeriesTable {
        SeriesTable {
            values: self.values.slice(s![start..end, ..]).to_owned(),
            native_mask: self.native_mask.slice(s![start..end, ..]).to_owned(),
            timestamps: self.timestamps[start..end].to_vec(),
            feature_names: self.feature_names.clone(),
        }
    }
}

fn validate_timestamps(ts: &[NaiveDateTime]) -> Result<()> {
    if ts.len() < 2 {
        return Ok(());
    }
    let interval = ts[1] - ts[0];
    for (i, pair) in ts.windows(2).enumerate() {
        let step = pair[1] - pair[0];
        if step <= chrono::TimeDelta::zero() {
            return Err(Error::Validation(format!(
                "timestamps not strictly increasing at row {} ({} then {})",
                i + 1,
                pair[0],
                pair[1]
            )));
        }
        if step != interval {
            return Err(Error::Validation(format!(
                "irregular sampling interval at row {}: expected {}, found {}",
                i + 1,
                interval,
                step
            )));
        }
    }
    Ok(())
}

/// CSV layout options. The first column is an ISO-8601 timestamp, the header
/// row names the features, and missing cells are empty or equal to
/// `missing_token`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CsvFormat {
    pub missing_token: Option<String>,
    pub delimiter: Option<char>,
}

pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_utc());
    }
    const FORMATS: [&str; 5] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
        "%Y/%m/%d %H:%M",
    ];
    for fmt in FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Reads a series from the documented CSV layout.
pub fn load_series(path: impl AsRef<Path>, format: &CsvFormat) -> Result<SeriesTable> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .delimiter(format.delimiter.unwrap_or(',') as u8)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "need a timestamp column and at least one feature".into(),
        });
    }
    let feature_names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let c = feature_names.len();

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = i + 2;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != c + 1 {
            return Err(parse_err(format!(
                "expected {} columns, found {}",
                c + 1,
                record.len()
            )));
        }
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| parse_err(format!("unparseable timestamp {:?}", &record[0])))?;
        timestamps.push(ts);
        for field in record.iter().skip(1) {
            let field = field.trim();
            let missing = field.is_empty()
                || format.missing_token.as_deref() == Some(field)
                || field.eq_ignore_ascii_case("nan");
            if missing {
                values.push(0.0);
                mask.push(false);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(format!("not a number: {field:?}")))?;
                values.push(v);
                mask.push(true);
            }
        }
    }
    let t = timestamps.len();
    let values = Array2::from_shape_vec((t, c), values).expect("row-major fill");
    let native_mask = Array2::from_shape_vec((t, c), mask).expect("row-major fill");
    SeriesTable::new(values, native_mask, timestamps, feature_names)
}

/// Writes a table in the layout [`load_series`] reads.
pub fn write_series(path: impl AsRef<Path>, series: &SeriesTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(series.feature_names.iter().cloned());
    w.write_record(&header)?;
    for (i, ts) in series.timestamps.iter().enumerate() {
        let mut row = vec![ts.format("%Y-%m-%dT%H:%M:%S").to_string()];
        for j in 0..series.num_features() {
            if series.native_mask[[i, j]] {
                row.push(format!("{}", series.values[[i, j]]));
            } else {
                row.push(String::new());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// How to cut a series into train/validation/test segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Contiguous fractions in time order (train first).
    Fractions { train: f64, val: f64, test: f64 },
    /// Half-open `[start, end)` timestamp ranges for each segment.
    Dates {
        train: (NaiveDateTime, NaiveDateTime),
        val: (NaiveDateTime, NaiveDateTime),
        test: (NaiveDateTime, NaiveDateTime),
    },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    /// ETT protocol: test 2016/07-2016/10, validation 2016/11-2017/02,
    /// training 2017/03-2018/06.
    pub fn ett() -> Self {
        let d = |y, m| {
            NaiveDate::from_ymd_opt(y, m, 1)
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .expect("valid date")
        };
        SplitSpec::Dates {
            test: (d(2016, 7), d(2016, 11)),
            val: (d(2016, 11), d(2017, 3)),
            train: (d(2017, 3), d(2018, 7)),
        }
    }
}

/// The three segments of a split series.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: SeriesTable,
    pub val: SeriesTable,
    pub test: SeriesTable,
}

/// Dataset partition names, used in sidecar file names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl Splits {
    pub fn get(&self, split: Split) -> &SeriesTable {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn split_series(series: &SeriesTable, spec: &SplitSpec) -> Result<Splits> {
    match spec {
        SplitSpec::Fractions { train, val, test } => {
            for (name, f) in [("train", train), ("val", val), ("test", test)] {
                if !(0.0..=1.0).contains(f) {
                    return Err(Error::Config(format!(
                        "split fraction {name} = {f} outside [0, 1]"
                    )));
                }
            }
            let total = train + val + test;
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "split fractions sum to {total}, expected 1"
                )));
            }
            let n = series.len();
            let n_train = (n as f64 * train).floor() as usize;
            let n_val = (n as f64 * val).floor() as usize;
            let n_train = n_train.min(n);
            let n_val = n_val.min(n - n_train);
            Ok(Splits {
                train: series.slice_rows(0, n_train),
                val: series.slice_rows(n_train, n_train + n_val),
                test: series.slice_rows(n_train + n_val, n),
            })
        }
        SplitSpec::Dates { train, val, test } => {
            let ranges = [("train", train), ("val", val), ("test", test)];
            for (name, (a, b)) in ranges {
                if a >= b {
                    return Err(Error::Config(format!("empty date range for {name}")));
                }
            }
            for i in 0..3 {
                for j in (i + 1)..3 {
                    let (ni, ri) = ranges[i];
                    let (nj, rj) = ranges[j];
                    if ri.0 < rj.1 && rj.0 < ri.1 {
                        return Err(Error::Config(format!(
                            "date ranges {ni} and {nj} overlap"
                        )));
                    }
                }
            }
            let segment = |(a, b): &(NaiveDateTime, NaiveDateTime)| {
                let start = series.timestamps.partition_point(|t| t < a);
                let end = series.timestamps.partition_point(|t| t < b);
                series.slice_rows(start, end)
            };
            Ok(Splits {
                train: segment(train),
                val: segment(val),
                test: segment(test),
            })
        }
    }
}

/// Per-feature z-score statistics over observed training cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn fit_normalizer(train: &SeriesTable) -> Result<NormStats> {
    let c = train.num_features();
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for j in 0..c {
        let observed: Vec<f64> = train
            .values
            .column(j)
            .iter()
            .zip(train.native_mask.column(j))
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect();
        if observed.is_empty() {
            return Err(Error::Validation(format!(
                "feature {:?} has no observed training cells",
                train.feature_names[j]
            )));
        }
        let n = observed.len() as f64;
        let mu = observed.iter().sum::<f64>() / n;
        let var = observed.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        mean[j] = mu;
        std[j] = var.sqrt().max(STD_FLOOR);
    }
    Ok(NormStats { mean, std })
}

impl NormStats {
    /// Statistics that leave values unchanged.
    pub fn identity(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            std: vec![1.0; features],
        }
    }

    pub fn num_features(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_value(&self, x: f64, feature: usize) -> f64 {
        (x - self.mean[feature]) / self.std[feature]
    }

    pub fn invert_value(&self, z: f64, feature: usize) -> f64 {
        z * self.std[feature] + self.mean[feature]
    }

    /// Normalizes observed cells; unobserved cells are set to zero.
    pub fn apply(&self, series: &SeriesTable) -> SeriesTable {
        let mut out = series.clone();
        for ((i, j), v) in out.values.indexed_iter_mut() {
            *v = if series.native_mask[[i, j]] {
                self.apply_value(*v, j)
            } else {
                0.0
            };
        }
        out
    }

    /// Maps a `(rows, C)` matrix of normalized values back to physical units.
    pub fn invert(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.invert_value(*v, j);
            }
        }
        out
    }
}

/// One length-`L` slice of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub values: Array2<f64>,
    pub obs_mask: Array2<bool>,
    /// Artificially hidden ground-truth cells; always a subset of `obs_mask`.
    pub eval_mask: Array2<bool>,
    pub start_index: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn num_features(&self) -> usize {
        self.values.ncols()
    }

    /// Cells usable as conditioning information: observed and not held out.
    pub fn cond_mask(&self) -> Array2<bool> {
        ndarray::Zip::from(&self.obs_mask)
            .and(&self.eval_mask)
            .map_collect(|&o, &e| o && !e)
    }

    /// Cells with no conditioning information, the ones inference fills in.
    pub fn target_mask(&self) -> Array2<bool> {
        self.cond_mask().mapv(|c| !c)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let bad = ndarray::Zip::from(&self.eval_mask)
            .and(&self.obs_mask)
            .fold(0usize, |acc, &e, &o| acc + usize::from(e && !o));
        if bad > 0 {
            return Err(Error::Invariant(format!(
                "window {}: {bad} evaluation cells are not observed",
                self.start_index
            )));
        }
        Ok(())
    }
}

/// Cuts `series` into windows of length `len` every `stride` steps.
///
/// Trailing steps that do not fill a window are dropped.
pub fn make_windows(series: &SeriesTable, len: usize, stride: usize) -> Result<Vec<Window>> {
    if len < 2 {
        return Err(Error::Config(format!("window length {len} < 2")));
    }
    if stride == 0 {
        return Err(Error::Config("window stride must be positive".into()));
    }
    let total = series.len();
    if total < len {
        log::warn!("series of {total} steps is shorter than the window length {len}");
        return Ok(Vec::new());
    }
    let c = series.num_features();
    let mut out = Vec::with_capacity((total - len) / stride + 1);
    let mut start = 0;
    while start + len <= total {
        let obs_mask = series.native_mask.slice(s![start..start + len, ..]).to_owned();
        let mut values = series.values.slice(s![start..start + len, ..]).to_owned();
        ndarray::Zip::from(&mut values)
            .and(&obs_mask)
            .for_each(|v, &m| {
                if !m {
                    *v = 0.0
                }
            });
        out.push(Window {
            values,
            obs_mask,
            eval_mask: Array2::from_elem((len, c), false),
            start_index: start,
        });
        start += stride;
    }
    Ok(out)
}

/// Evaluation missing patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MissingPattern {
    /// Each observed cell hidden independently with probability `ratio`.
    Point { ratio: f64 },
    /// Point missing at `base_ratio`, plus per-(step, feature) block starts
    /// with probability `start_prob`, block length uniform in
    /// `[min_len, max_len]`, truncated at the window edge.
    Block {
        base_ratio: f64,
        start_prob: f64,
        min_len: usize,
        max_len: usize,
    },
}

impl MissingPattern {
    pub fn point() -> Self {
        MissingPattern::Point { ratio: 0.2 }
    }

    /// Benchmark block protocol for window length `window`: 5% points plus
    /// blocks of `[L/2, 2L]` steps started with probability 0.15%.
    pub fn block(window: usize) -> Self {
        MissingPattern::Block {
            base_ratio: 0.05,
            start_prob: 0.0015,
            min_len: window / 2,
            max_len: 2 * window,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MissingPattern::Point { .. } => "point",
            MissingPattern::Block { .. } => "block",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{key} = {v} outside [0, 1]")))
            }
        };
        match *self {
            MissingPattern::Point { ratio } => check("missing.ratio", ratio),
            MissingPattern::Block {
                base_ratio,
                start_prob,
                min_len,
                max_len,
            } => {
                check("missing.block_base_ratio", base_ratio)?;
                check("missing.block_start_prob", start_prob)?;
                if min_len == 0 || min_len > max_len {
                    return Err(Error::Config(format!(
                        "block length range [{min_len}, {max_len}] is empty"
                    )));
                }
                Ok(())
            }
        }
    }
}

const SIMULATE_STREAM: u64 = 0x5349_4d55;

/// Sets `eval_mask` on each window according to `pattern`.
///
/// Each window draws from its own stream keyed by `(seed, start_index)`, so
/// the result does not depend on how the list is ordered or partitioned.
pub fn simulate_missing(
    windows: &[Window],
    pattern: &MissingPattern,
    seed: u64,
) -> Result<Vec<Window>> {
    pattern.validate()?;
    let out = windows
        .iter()
        .map(|w| {
            let mut rng = rng_from_seed(derive_seed(seed, SIMULATE_STREAM, w.start_index as u64));
            let (len, c) = w.obs_mask.dim();
            let mut eval = Array2::from_elem((len, c), false);
            match *pattern {
                MissingPattern::Point { ratio } => {
                    for (e, &o) in eval.iter_mut().zip(w.obs_mask.iter()) {
                        *e = o && rng.random_bool(ratio);
                    }
                }
                MissingPattern::Block {
                    base_ratio,
                    start_prob,
                    min_len,
                    max_len,
                } => {
                    for (e, &o) in eval.iter_mut().zip(w.obs_mask.iter()) {
                        *e = o && rng.random_bool(base_ratio);
                    }
                    for t in 0..len {
                        for j in 0..c {
                            if rng.random_bool(start_prob) {
                                let block = rng.random_range(min_len..=max_len);
                                for tt in t..(t + block).min(len) {
                                    eval[[tt, j]] |= w.obs_mask[[tt, j]];
                                }
                            }
                        }
                    }
                }
            }
            Window {
                eval_mask: eval,
                ..w.clone()
            }
        })
        .collect();
    Ok(out)
}

/// A window and its immediate successor.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub sampled: Window,
    pub context: Option<Window>,
}

impl WindowPair {
    pub fn has_context(&self) -> bool {
        self.context.is_some()
    }
}

/// Pairs each window with the window starting exactly `L` steps later.
///
/// Windows whose successor is missing (end of segment or a gap) get no
/// context.
pub fn pair_with_context(windows: &[Window]) -> Vec<WindowPair> {
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let context = windows
                .get(i + 1)
                .filter(|next| next.start_index == w.start_index + w.len())
                .cloned();
            WindowPair {
                sampled: w.clone(),
                context,
            }
        })
        .collect()
}

/// File name of a frozen evaluation-mask sidecar.
pub fn sidecar_name(split: Split, pattern: &MissingPattern, seed: u64) -> String {
    format!("{split}.{}.{seed}.mask", pattern.name())
}

/// Writes the evaluation masks of `windows` as CSV rows
/// `window_start,t,<one 0/1 column per feature>`.
pub fn write_mask_sidecar(path: impl AsRef<Path>, windows: &[Window]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let c = windows.first().map_or(0, Window::num_features);
    write!(out, "window_start,t")?;
    for j in 0..c {
        write!(out, ",f{j}")?;
    }
    writeln!(out)?;
    for w in windows {
        for (t, row) in w.eval_mask.axis_iter(Axis(0)).enumerate() {
            write!(out, "{},{}", w.start_index, t)?;
            for &m in row {
                write!(out, ",{}", u8::from(m))?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a sidecar and applies it to `windows`, which must match it window
/// for window.
pub fn apply_mask_sidecar(path: impl AsRef<Path>, windows: &[Window]) -> Result<Vec<Window>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<(usize, usize, Vec<bool>)> = Vec::new();
    for (i, line) in reader.lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let mut fields = line.split(',');
        let mut next_usize = |what: &str| -> Result<usize> {
            fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| err(format!("bad {what}")))
        };
        let start = next_usize("window_start")?;
        let t = next_usize("t")?;
        let bits = fields
            .map(|f| match f.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(err(format!("mask entry {other:?} is not 0/1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((start, t, bits));
    }
    let mut out = Vec::with_capacity(windows.len());
    let mut it = rows.into_iter();
    for w in windows {
        let (len, c) = w.obs_mask.dim();
        let mut eval = Array2::from_elem((len, c), false);
        for t in 0..len {
            let (start, tt, bits) = it.next().ok_or_else(|| {
                Error::Validation(format!(
                    "{}: sidecar ends before window {}",
                    path.display(),
                    w.start_index
                ))
            })?;
            if start != w.start_index || tt != t || bits.len() != c {
                return Err(Error::Validation(format!(
                    "{}: sidecar row ({start},{tt}) does not match window {} step {t}",
                    path.display(),
                    w.start_index
                )));
            }
            for (j, b) in bits.into_iter().enumerate() {
                eval[[t, j]] = b;
            }
        }
        let w = Window {
            eval_mask: eval,
            ..w.clone()
        };
        w.check_invariants()?;
        out.push(w);
    }
    if it.next().is_some() {
        return Err(Error::Validation(format!(
            "{}: sidecar has more rows than windows",
            path.display()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(n: usize) -> Vec<NaiveDateTime> {
        let t0 = parse_timestamp("2020-01-01T00:00:00").unwrap();
        (0..n)
            .map(|i| t0 + chrono::TimeDelta::minutes(15 * i as i64))
            .collect()
    }

    fn table(values: Array2<f64>) -> SeriesTable {
        let (t, c) = values.dim();
        let mask = Array2::from_elem((t, c), true);
        let names = (0..c).map(|j| format!("f{j}")).collect();
        SeriesTable::new(values, mask, ts(t), names).unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_marks_empty_cell_missing() {
        let f = write_tmp(
            "date,a,b\n2020-01-01 00:00:00,1.0,2.0\n2020-01-01 01:00:00,,3.0\n2020-01-01 02:00:00,4.0,5.0\n",
        );
        let s = load_series(f.path(), &CsvFormat::default()).unwrap();
        assert_eq!(s.values.dim(), (3, 2));
        assert_eq!(s.native_mask.iter().filter(|&&m| !m).count(), 1);
        assert!(!s.native_mask[[1, 0]]);
        assert_eq!(s.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn load_wide_file_counts_features() {
        let c = 207;
        let mut text = String::from("timestamp");
        for j in 0..c {
            text.push_str(&format!(",sensor{j}"));
        }
        text.push('\n');
        for i in 0..3 {
            text.push_str(&format!("2012-03-01T00:{:02}:00", 5 * i));
            for j in 0..c {
                text.push_str(&format!(",{}", j as f64 + 0.5));
            }
            text.push('\n');
        }
        let f = write_tmp(&text);
        let s = load_series(f.path(), &CsvFormat::default()).unwrap();
        assert_eq!(s.num_features(), 207);
    }

    #[test]
    fn sentinel_token_is_missing() {
        let f = write_tmp("t,a\n2020-01-01,1\n2020-01-02,-999\n");
        let fmt = CsvFormat {
            missing_token: Some("-999".into()),
            ..Default::default()
        };
        let s = load_series(f.path(), &fmt).unwrap();
        assert!(!s.native_mask[[1, 0]]);
    }

    #[test]
    fn duplicated_timestamp_is_rejected() {
        let f = write_tmp("t,a\n2020-01-01,1\n2020-01-01,2\n");
        let err = load_series(f.path(), &CsvFormat::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn ragged_row_names_line() {
        let f = write_tmp("t,a,b\n2020-01-01,1,2\n2020-01-02,3\n");
        match load_series(f.path(), &CsvFormat::default()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn fractional_split_lengths() {
        let spec = SplitSpec::default();
        let s = split_series(&table(Array2::zeros((100, 1))), &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        let s = split_series(&table(Array2::zeros((105, 1))), &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (73, 10, 22));
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let spec = SplitSpec::Fractions {
            train: 0.7,
            val: 0.2,
            test: 0.2,
        };
        let err = split_series(&table(Array2::zeros((10, 1))), &spec).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn ett_date_split_puts_first_four_months_in_test() {
        let t0 = parse_timestamp("2016-07-01T00:00:00").unwrap();
        let n = 4 * 24 * 730;
        let stamps: Vec<_> = (0..n)
            .map(|i| t0 + chrono::TimeDelta::minutes(15 * i as i64))
            .collect();
        let s = SeriesTable::new(
            Array2::zeros((n, 1)),
            Array2::from_elem((n, 1), true),
            stamps,
            vec!["OT".into()],
        )
        .unwrap();
        let parts = split_series(&s, &SplitSpec::ett()).unwrap();
        assert_eq!(
            parts.test.timestamps.first().unwrap().date(),
            NaiveDate::from_ymd_opt(2016, 7, 1).unwrap()
        );
        assert_eq!(
            parts.test.timestamps.last().unwrap().date(),
            NaiveDate::from_ymd_opt(2016, 10, 31).unwrap()
        );
        assert_eq!(
            parts.val.timestamps.first().unwrap().date(),
            NaiveDate::from_ymd_opt(2016, 11, 1).unwrap()
        );
        assert_eq!(
            parts.train.timestamps.first().unwrap().date(),
            NaiveDate::from_ymd_opt(2017, 3, 1).unwrap()
        );
    }

    #[test]
    fn overlapping_dates_rejected() {
        let d = |s| parse_timestamp(s).unwrap();
        let spec = SplitSpec::Dates {
            train: (d("2020-01-01"), d("2020-03-01")),
            val: (d("2020-02-01"), d("2020-04-01")),
            test: (d("2020-04-01"), d("2020-05-01")),
        };
        let err = split_series(&table(Array2::zeros((3, 1))), &spec).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn normalizer_constant_feature_clamps() {
        let s = table(Array2::from_elem((6, 1), 5.0));
        let stats = fit_normalizer(&s).unwrap();
        assert_eq!(stats.mean[0], 5.0);
        assert_eq!(stats.std[0], STD_FLOOR);
        assert!(stats.apply(&s).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalizer_two_point_feature() {
        let s = table(ndarray::array![[0.0], [2.0]]);
        let stats = fit_normalizer(&s).unwrap();
        assert_eq!(stats.mean[0], 1.0);
        assert!((stats.std[0] - 1.0).abs() < 1e-15);
        let z = stats.apply(&s);
        assert_eq!(z.values, ndarray::array![[-1.0], [1.0]]);
        assert_eq!(stats.invert(&z.values), s.values);
    }

    #[test]
    fn normalizer_rejects_unobserved_feature() {
        let mut s = table(Array2::ones((4, 2)));
        s.native_mask.column_mut(1).fill(false);
        let err = fit_normalizer(&s).unwrap_err().to_string();
        assert!(err.contains("f1"), "{err}");
    }

    #[test]
    fn window_counts() {
        let s = table(Array2::zeros((100, 2)));
        assert_eq!(make_windows(&s, 24, 24).unwrap().len(), 4);
        let s = table(Array2::zeros((24, 2)));
        let w = make_windows(&s, 24, 24).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].start_index, 0);
        let s = table(Array2::zeros((23, 2)));
        assert!(make_windows(&s, 24, 24).unwrap().is_empty());
    }

    #[test]
    fn point_missing_ratio_concentrates() {
        let s = table(Array2::zeros((24 * 1000, 5)));
        let w = make_windows(&s, 24, 24).unwrap();
        let w = simulate_missing(&w, &MissingPattern::point(), 11).unwrap();
        let hidden: usize = w.iter().map(|w| w.eval_mask.iter().filter(|&&e| e).count()).sum();
        let frac = hidden as f64 / (24.0 * 1000.0 * 5.0);
        assert!((frac - 0.2).abs() < 0.01, "{frac}");
    }

    #[test]
    fn zero_ratio_and_determinism() {
        let s = table(Array2::zeros((240, 3)));
        let w = make_windows(&s, 24, 24).unwrap();
        let none = simulate_missing(&w, &MissingPattern::Point { ratio: 0.0 }, 3).unwrap();
        assert!(none.iter().all(|w| w.eval_mask.iter().all(|&e| !e)));
        let a = simulate_missing(&w, &MissingPattern::block(24), 3).unwrap();
        let b = simulate_missing(&w, &MissingPattern::block(24), 3).unwrap();
        assert_eq!(a, b);
        let err = simulate_missing(&w, &MissingPattern::Point { ratio: 1.5 }, 3).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn pairing_respects_adjacency() {
        let s = table(Array2::zeros((96, 1)));
        let w = make_windows(&s, 24, 24).unwrap();
        let pairs = pair_with_context(&w);
        assert_eq!(pairs.len(), 4);
        assert!(pairs[..3].iter().all(WindowPair::has_context));
        assert!(!pairs[3].has_context());
        assert_eq!(pairs[0].context.as_ref().unwrap().start_index, 24);

        let single = pair_with_context(&w[..1]);
        assert!(!single[0].has_context());

        let gapped = vec![w[0].clone(), w[2].clone()];
        assert!(pair_with_context(&gapped).iter().all(|p| !p.has_context()));
    }

    #[test]
    fn sidecar_round_trip() {
        let s = table(Array2::zeros((72, 3)));
        let w = make_windows(&s, 24, 24).unwrap();
        let masked = simulate_missing(&w, &MissingPattern::point(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir
            .path()
            .join(sidecar_name(Split::Test, &MissingPattern::point(), 5));
        assert!(path.ends_with("test.point.5.mask"));
        write_mask_sidecar(&path, &masked).unwrap();
        let back = apply_mask_sidecar(&path, &w).unwrap();
        assert_eq!(back, masked);
    }
}
