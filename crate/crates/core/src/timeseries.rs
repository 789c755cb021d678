//! Uniformly sampled multivariate series: loading, 3σ outlier repair,
//! min-max normalization and contiguous splitting.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sample interval assumed when a file holds a single row.
pub const DEFAULT_SAMPLE_INTERVAL: i64 = 5;

/// Maximum number of repair passes before `repair_outliers` gives up on a fixpoint.
pub const MAX_REPAIR_PASSES: usize = 5;

/// Number of preceding clean samples averaged to replace an outlier.
pub const REPAIR_WINDOW: usize = 10;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("duplicate tag: {0}")]
    DuplicateTag(String),
    #[error("unknown tag: {0}")]
    UnknownTag(String),
    #[error("non-numeric cell at ({row}, {tag})")]
    NonNumericCell { row: usize, tag: String },
    #[error("invalid timestamp at row {row}: {value}")]
    InvalidTimestamp { row: usize, value: String },
    #[error("timestamp gap at row {row}: expected {expected}, found {found}")]
    TimestampGap { row: usize, expected: i64, found: i64 },
    #[error("table has no rows")]
    Empty,
    #[error("column {tag} has {len} values, expected {expected}")]
    LengthMismatch { tag: String, len: usize, expected: usize },
    #[error("sample interval must be positive, got {0}")]
    BadInterval(i64),
    #[error("missing normalization parameters for {0}")]
    MissingParams(String),
    #[error("degenerate normalization range for {0}")]
    DegenerateRange(String),
    #[error("split point {n_train} out of range for {rows} rows")]
    SplitOutOfRange { n_train: usize, rows: usize },
    #[error("incompatible tables: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, TableError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub tag: String,
    pub values: Vec<f64>,
    pub unit: String,
}

impl Column {
    pub fn new(tag: impl Into<String>, values: Vec<f64>) -> Self {
        Self { tag: tag.into(), values, unit: String::new() }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = unit.into();
        self
    }
}

/// A uniformly sampled multivariate series with one designated target column.
///
/// Construction validates every invariant; the type is immutable afterwards
/// (all transforms return new tables).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesTable {
    sample_interval: i64,
    timestamps: Vec<i64>,
    columns: Vec<Column>,
    target_tag: String,
}

impl TimeSeriesTable {
    pub fn new(
        sample_interval: i64,
        timestamps: Vec<i64>,
        columns: Vec<Column>,
        target_tag: impl Into<String>,
    ) -> Result<Self> {
        let target_tag = target_tag.into();
        if sample_interval <= 0 {
            return Err(TableError::BadInterval(sample_interval));
        }
        if timestamps.is_empty() {
            return Err(TableError::Empty);
        }
        for (row, pair) in timestamps.windows(2).enumerate() {
            if pair[1] - pair[0] != sample_interval {
                return Err(TableError::TimestampGap {
                    row: row + 1,
                    expected: pair[0] + sample_interval,
                    found: pair[1],
                });
            }
        }
        let mut seen = HashSet::new();
        for col in &columns {
            if !seen.insert(col.tag.as_str()) {
                return Err(TableError::DuplicateTag(col.tag.clone()));
            }
            if col.values.len() != timestamps.len() {
                return Err(TableError::LengthMismatch {
                    tag: col.tag.clone(),
                    len: col.values.len(),
                    expected: timestamps.len(),
                });
            }
        }
        if !seen.contains(target_tag.as_str()) {
            return Err(TableError::UnknownTag(target_tag));
        }
        Ok(Self { sample_interval, timestamps, columns, target_tag })
    }

    /// Builds a table whose timestamps start at `start` and advance by `sample_interval`.
    pub fn from_columns(
        sample_interval: i64,
        start: i64,
        columns: Vec<Column>,
        target_tag: impl Into<String>,
    ) -> Result<Self> {
        let n = columns.first().map(|c| c.values.len()).unwrap_or(0);
        let timestamps = (0..n as i64).map(|i| start + i * sample_interval).collect();
        Self::new(sample_interval, timestamps, columns, target_tag)
    }

    pub fn sample_interval(&self) -> i64 {
        self.sample_interval
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn target_tag(&self) -> &str {
        &self.target_tag
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn column(&self, tag: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.tag == tag)
    }

    pub fn values(&self, tag: &str) -> Result<&[f64]> {
        self.column(tag)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| TableError::UnknownTag(tag.to_string()))
    }

    pub fn target(&self) -> &[f64] {
        &self.column(&self.target_tag).expect("target column present").values
    }

    /// Tags of every non-target column in table order.
    pub fn input_tags(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.tag != self.target_tag)
            .map(|c| c.tag.clone())
            .collect()
    }

    /// Keeps only `tags` (in the given order) plus the target column.
    pub fn select(&self, tags: &[String]) -> Result<Self> {
        let mut columns = Vec::with_capacity(tags.len() + 1);
        for tag in tags {
            if tag == &self.target_tag {
                continue;
            }
            let col = self.column(tag).ok_or_else(|| TableError::UnknownTag(tag.clone()))?;
            columns.push(col.clone());
        }
        columns.push(self.column(&self.target_tag).expect("target present").clone());
        Self::new(self.sample_interval, self.timestamps.clone(), columns, self.target_tag.clone())
    }

    /// Rows `[start, end)` as a new table.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(TableError::SplitOutOfRange { n_train: start, rows: self.len() });
        }
        let columns = self
            .columns
            .iter()
            .map(|c| Column { tag: c.tag.clone(), values: c.values[start..end].to_vec(), unit: c.unit.clone() })
            .collect();
        Self::new(
            self.sample_interval,
            self.timestamps[start..end].to_vec(),
            columns,
            self.target_tag.clone(),
        )
    }

    /// Row-major feature rows for `tags`.
    pub fn rows(&self, tags: &[String]) -> Result<Vec<Vec<f64>>> {
        let cols = tags.iter().map(|t| self.values(t)).collect::<Result<Vec<_>>>()?;
        Ok((0..self.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect())
    }

    pub(crate) fn with_columns(&self, columns: Vec<Column>) -> Result<Self> {
        Self::new(self.sample_interval, self.timestamps.clone(), columns, self.target_tag.clone())
    }

    /// Appends `other`, which must continue this table's time grid with the same columns.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        let tags: Vec<&str> = self.columns.iter().map(|c| c.tag.as_str()).collect();
        let other_tags: Vec<&str> = other.columns.iter().map(|c| c.tag.as_str()).collect();
        if tags != other_tags || self.sample_interval != other.sample_interval || self.target_tag != other.target_tag {
            return Err(TableError::Incompatible(format!("cannot append columns {other_tags:?} to {tags:?}")));
        }
        let mut timestamps = self.timestamps.clone();
        timestamps.extend_from_slice(&other.timestamps);
        let columns = self
            .columns
            .iter()
            .zip(&other.columns)
            .map(|(a, b)| Column { tag: a.tag.clone(), values: [a.values.as_slice(), &b.values].concat(), unit: a.unit.clone() })
            .collect();
        Self::new(self.sample_interval, timestamps, columns, self.target_tag.clone())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.columns.iter().map(|c| c.tag.clone()));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut record = vec![self.timestamps[i].to_string()];
            record.extend(self.columns.iter().map(|c| c.values[i].to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

/// Parses a timestamp cell as integer seconds or an ISO-8601 / RFC 3339 datetime.
pub fn parse_timestamp(cell: &str) -> Option<i64> {
    let cell = cell.trim();
    if let Ok(secs) = cell.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(cell) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(cell, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Reads a table from any CSV source. An empty `schema` keeps every column
/// from the header; otherwise only the listed tags are kept, in schema order.
pub fn read_table<R: Read>(reader: R, schema: &[String], target_tag: &str) -> Result<TimeSeriesTable> {
    let mut schema_seen = HashSet::new();
    for tag in schema {
        if !schema_seen.insert(tag.as_str()) {
            return Err(TableError::DuplicateTag(tag.clone()));
        }
    }

    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut header_seen = HashSet::new();
    for tag in header.iter().skip(1) {
        if !header_seen.insert(tag.as_str()) {
            return Err(TableError::DuplicateTag(tag.clone()));
        }
    }

    let wanted: Vec<String> = if schema.is_empty() {
        header.iter().skip(1).cloned().collect()
    } else {
        schema.to_vec()
    };
    let positions = wanted
        .iter()
        .map(|tag| {
            header
                .iter()
                .skip(1)
                .position(|h| h == tag)
                .map(|p| p + 1)
                .ok_or_else(|| TableError::UnknownTag(tag.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    if !wanted.iter().any(|t| t == target_tag) {
        return Err(TableError::UnknownTag(target_tag.to_string()));
    }

    let mut timestamps = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let ts_cell = record.get(0).unwrap_or("");
        let ts = parse_timestamp(ts_cell)
            .ok_or_else(|| TableError::InvalidTimestamp { row, value: ts_cell.to_string() })?;
        timestamps.push(ts);
        for ((col, &pos), tag) in values.iter_mut().zip(&positions).zip(&wanted) {
            let v = record
                .get(pos)
                .and_then(|c| c.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| TableError::NonNumericCell { row, tag: tag.clone() })?;
            col.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(TableError::Empty);
    }
    let interval =
        if timestamps.len() > 1 { timestamps[1] - timestamps[0] } else { DEFAULT_SAMPLE_INTERVAL };
    if interval <= 0 {
        return Err(TableError::TimestampGap { row: 1, expected: timestamps[0] + 1, found: timestamps[1] });
    }
    let columns = wanted.into_iter().zip(values).map(|(tag, v)| Column::new(tag, v)).collect();
    TimeSeriesTable::new(interval, timestamps, columns, target_tag)
}

pub fn load_table(path: impl AsRef<Path>, schema: &[String], target_tag: &str) -> Result<TimeSeriesTable> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(TableError::MissingFile(path.to_path_buf()));
    }
    read_table(File::open(path)?, schema, target_tag)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub index: usize,
    pub original: f64,
    pub replacement: f64,
}

/// Every replacement made by [`repair_outliers`], grouped by tag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub replacements: BTreeMap<String, Vec<Replacement>>,
}

impl OutlierReport {
    pub fn is_empty(&self) -> bool {
        self.replacements.values().all(Vec::is_empty)
    }

    pub fn total(&self) -> usize {
        self.replacements.values().map(Vec::len).sum()
    }

    pub fn indices(&self, tag: &str) -> Vec<usize> {
        self.replacements.get(tag).map(|r| r.iter().map(|x| x.index).collect()).unwrap_or_default()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["tag", "index", "original", "replacement"])?;
        for (tag, reps) in &self.replacements {
            for r in reps {
                w.write_record([
                    tag.clone(),
                    r.index.to_string(),
                    r.original.to_string(),
                    r.replacement.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One Pauta pass over a column. Returns the flagged indices with their replacements.
fn repair_pass(values: &mut [f64]) -> Vec<(usize, f64, f64)> {
    let (mean, std) = mean_std(values);
    if std == 0.0 || !std.is_finite() {
        return Vec::new();
    }
    let flagged: Vec<bool> = values.iter().map(|v| (v - mean).abs() > 3.0 * std).collect();
    if !flagged.iter().any(|&f| f) {
        return Vec::new();
    }
    let original = values.to_vec();
    let mut out = Vec::new();
    for i in (0..values.len()).filter(|&i| flagged[i]) {
        let preceding: Vec<f64> =
            (0..i).rev().filter(|&j| !flagged[j]).take(REPAIR_WINDOW).map(|j| original[j]).collect();
        let replacement = if !preceding.is_empty() {
            preceding.iter().sum::<f64>() / preceding.len() as f64
        } else {
            match (i + 1..values.len()).find(|&j| !flagged[j]) {
                Some(j) => original[j],
                None => original[i],
            }
        };
        values[i] = replacement;
        out.push((i, original[i], replacement));
    }
    out
}

/// Replaces every sample farther than 3σ from its column mean with the mean of
/// the 10 preceding unflagged samples, repeating until no sample is flagged
/// (at most [`MAX_REPAIR_PASSES`] passes). All columns, target included, are repaired.
pub fn repair_outliers(table: &TimeSeriesTable) -> (TimeSeriesTable, OutlierReport) {
    let mut report = OutlierReport::default();
    let mut columns = table.columns.clone();
    for col in &mut columns {
        // index -> (first original, latest replacement)
        let mut changes: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for _ in 0..MAX_REPAIR_PASSES {
            let pass = repair_pass(&mut col.values);
            if pass.is_empty() {
                break;
            }
            for (i, orig, rep) in pass {
                changes.entry(i).and_modify(|e| e.1 = rep).or_insert((orig, rep));
            }
        }
        if !changes.is_empty() {
            report.replacements.insert(
                col.tag.clone(),
                changes
                    .into_iter()
                    .map(|(index, (original, replacement))| Replacement { index, original, replacement })
                    .collect(),
            );
        }
    }
    let repaired = table.with_columns(columns).expect("shape preserved");
    (repaired, report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn is_degenerate(&self) -> bool {
        self.max == self.min
    }
}

/// Per-tag min-max parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub ranges: BTreeMap<String, Range>,
}

impl NormParams {
    pub fn get(&self, tag: &str) -> Result<Range> {
        self.ranges.get(tag).copied().ok_or_else(|| TableError::MissingParams(tag.to_string()))
    }

    pub fn normalize(&self, tag: &str, value: f64) -> Result<f64> {
        let r = self.get(tag)?;
        Ok(scale(value, r))
    }
}

fn scale(x: f64, r: Range) -> f64 {
    if r.is_degenerate() {
        0.0
    } else {
        (x - r.min) / (r.max - r.min)
    }
}

pub fn fit_normalizer(table: &TimeSeriesTable) -> NormParams {
    let ranges = table
        .columns
        .iter()
        .map(|c| {
            let min = c.values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = c.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (c.tag.clone(), Range { min, max })
        })
        .collect();
    NormParams { ranges }
}

/// Maps every value to `(x - min) / (max - min)` without clamping; degenerate
/// ranges map to 0.
pub fn apply_normalizer(table: &TimeSeriesTable, params: &NormParams) -> Result<TimeSeriesTable> {
    let columns = table
        .columns
        .iter()
        .map(|c| {
            let r = params.get(&c.tag)?;
            Ok(Column {
                tag: c.tag.clone(),
                values: c.values.iter().map(|&x| scale(x, r)).collect(),
                unit: c.unit.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    table.with_columns(columns)
}

pub fn invert_normalizer(values: &[f64], tag: &str, params: &NormParams) -> Result<Vec<f64>> {
    let r = params.get(tag)?;
    if r.is_degenerate() {
        return Err(TableError::DegenerateRange(tag.to_string()));
    }
    Ok(values.iter().map(|&v| v * (r.max - r.min) + r.min).collect())
}

/// First `n_train` rows become the training table, the rest the test table.
pub fn split_contiguous(table: &TimeSeriesTable, n_train: usize) -> Result<(TimeSeriesTable, TimeSeriesTable)> {
    if n_train == 0 || n_train >= table.len() {
        return Err(TableError::SplitOutOfRange { n_train, rows: table.len() });
    }
    Ok((table.slice_rows(0, n_train)?, table.slice_rows(n_train, table.len())?))
}
