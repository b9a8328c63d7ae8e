//! Loading, calendar alignment, transforms and windowing of daily series.
//!
//! Price panels are stored column-major (one vector per named series) since
//! alignment and filling work per column. Return panels and feature matrices
//! are row-major because the backtest and the models consume one day at a time.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

/// Trading days per year used for every annualization in the crate.
pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed csv {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: line {line}: cannot parse {what} `{value}`")]
    Parse {
        path: PathBuf,
        line: usize,
        what: &'static str,
        value: String,
    },
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("dates are not strictly increasing at {0}")]
    Unordered(NaiveDate),
    #[error("column `{column}` has a non-positive price {value} on {date}")]
    NonPositive {
        column: String,
        date: NaiveDate,
        value: f64,
    },
    #[error("column `{column}` has a non-finite value on {date}")]
    NonFinite { column: String, date: NaiveDate },
    #[error("column `{column}` has {got} values for {expected} dates")]
    Length {
        column: String,
        got: usize,
        expected: usize,
    },
    #[error("column `{0}` has no observations")]
    EmptyColumn(String),
    #[error("column `{0}` appears more than once")]
    DuplicateColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("calendar {cal_start}..{cal_end} does not overlap panel {start}..{end}")]
    DisjointCalendar {
        cal_start: NaiveDate,
        cal_end: NaiveDate,
        start: NaiveDate,
        end: NaiveDate,
    },
    #[error("empty calendar")]
    EmptyCalendar,
    #[error("no panels to align")]
    NoPanels,
    #[error("series too short: need more than {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("validation fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("lookback must be positive")]
    ZeroLookback,
    #[error("feature rows ({features}) and target rows ({targets}) differ")]
    RowMismatch { features: usize, targets: usize },
}

/// A named column in a price panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

/// Daily panel of asset prices and exogenous features on a common calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    assets: Vec<Column>,
    features: Vec<Column>,
}

impl PricePanel {
    /// Builds a panel, checking ordering, column lengths, finiteness and name
    /// uniqueness. Price positivity is checked separately by
    /// [`PricePanel::check_positive`] since derived slots (e.g. a volatility
    /// proxy) may legitimately be zero.
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<Column>,
        features: Vec<Column>,
    ) -> Result<Self, DataError> {
        for w in dates.windows(2) {
            if w[1] == w[0] {
                return Err(DataError::DuplicateDate(w[1]));
            }
            if w[1] < w[0] {
                return Err(DataError::Unordered(w[1]));
            }
        }
        let mut seen = HashSet::new();
        for col in assets.iter().chain(features.iter()) {
            if !seen.insert(col.name.as_str()) {
                return Err(DataError::DuplicateColumn(col.name.clone()));
            }
            if col.values.len() != dates.len() {
                return Err(DataError::Length {
                    column: col.name.clone(),
                    got: col.values.len(),
                    expected: dates.len(),
                });
            }
            if let Some(i) = col.values.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite {
                    column: col.name.clone(),
                    date: dates[i],
                });
            }
        }
        Ok(Self {
            dates,
            assets,
            features,
        })
    }

    pub fn check_positive(&self) -> Result<(), DataError> {
        for col in &self.assets {
            if let Some(i) = col.values.iter().position(|&v| v <= 0.0) {
                return Err(DataError::NonPositive {
                    column: col.name.clone(),
                    date: self.dates[i],
                    value: col.values[i],
                });
            }
        }
        Ok(())
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[Column] {
        &self.assets
    }

    pub fn features(&self) -> &[Column] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn asset_names(&self) -> Vec<String> {
        self.assets.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.assets
            .iter()
            .chain(self.features.iter())
            .find(|c| c.name == name)
    }

    /// Re-slots columns: `assets` become the asset columns in that order and
    /// `features` the feature columns. Any column of the panel may be used in
    /// either role.
    pub fn select(&self, assets: &[String], features: &[String]) -> Result<Self, DataError> {
        let pick = |names: &[String]| -> Result<Vec<Column>, DataError> {
            names
                .iter()
                .map(|n| {
                    self.column(n)
                        .cloned()
                        .ok_or_else(|| DataError::UnknownColumn(n.clone()))
                })
                .collect()
        };
        Self::new(self.dates.clone(), pick(assets)?, pick(features)?)
    }

    /// Rows whose date lies in `[start, end]`.
    pub fn between(&self, start: NaiveDate, end: NaiveDate) -> Result<Self, DataError> {
        let lo = self.dates.partition_point(|d| *d < start);
        let hi = self.dates.partition_point(|d| *d <= end);
        let cut = |cols: &[Column]| {
            cols.iter()
                .map(|c| Column::new(c.name.clone(), c.values[lo..hi].to_vec()))
                .collect()
        };
        Self::new(
            self.dates[lo..hi].to_vec(),
            cut(&self.assets),
            cut(&self.features),
        )
    }
}

/// One column of a CSV file mapped to an internal series name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    /// Header in the source file (e.g. `Adj Close`).
    pub source: String,
    /// Internal series name (e.g. `VTI`).
    pub name: String,
    /// Asset columns must hold strictly positive prices.
    #[serde(default)]
    pub feature: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    #[serde(default = "default_date_column")]
    pub date_column: String,
    pub columns: Vec<ColumnSpec>,
}

fn default_date_column() -> String {
    "date".to_string()
}

/// Reads a dated CSV into a panel sorted by date.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PricePanel, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let locate = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let date_idx = locate(&schema.date_column)?;
    let value_idx = schema
        .columns
        .iter()
        .map(|c| locate(&c.source))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // header is line 1
        let line = i + 2;
        let raw_date = record.get(date_idx).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|_| DataError::Parse {
            path: path.to_path_buf(),
            line,
            what: "date",
            value: raw_date.to_string(),
        })?;
        let values = value_idx
            .iter()
            .map(|&j| {
                let raw = record.get(j).unwrap_or("");
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DataError::Parse {
                        path: path.to_path_buf(),
                        line,
                        what: "value",
                        value: raw.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((date, values));
    }
    rows.sort_by_key(|(d, _)| *d);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(DataError::DuplicateDate(w[0].0));
    }

    let dates: Vec<NaiveDate> = rows.iter().map(|(d, _)| *d).collect();
    let mut assets = Vec::new();
    let mut features = Vec::new();
    for (j, spec) in schema.columns.iter().enumerate() {
        let col = Column::new(spec.name.clone(), rows.iter().map(|(_, v)| v[j]).collect());
        if spec.feature {
            features.push(col);
        } else {
            assets.push(col);
        }
    }
    let panel = PricePanel::new(dates, assets, features)?;
    panel.check_positive()?;
    Ok(panel)
}

/// Sorted union of the dates of several panels.
pub fn union_calendar<'a>(panels: impl IntoIterator<Item = &'a PricePanel>) -> Vec<NaiveDate> {
    let set: BTreeSet<NaiveDate> = panels
        .into_iter()
        .flat_map(|p| p.dates.iter().copied())
        .collect();
    set.into_iter().collect()
}

/// Reindexes every column of every panel onto `calendar`. Gaps take the last
/// observation at or before the date; dates before a column's first
/// observation take that first observation.
pub fn align_and_fill(
    panels: &[PricePanel],
    calendar: &[NaiveDate],
) -> Result<PricePanel, DataError> {
    if panels.is_empty() {
        return Err(DataError::NoPanels);
    }
    let (&cal_start, &cal_end) = match (calendar.first(), calendar.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(DataError::EmptyCalendar),
    };
    for w in calendar.windows(2) {
        if w[1] <= w[0] {
            return Err(DataError::Unordered(w[1]));
        }
    }

    let mut assets = Vec::new();
    let mut features = Vec::new();
    for panel in panels {
        let (start, end) = match (panel.dates.first(), panel.dates.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => {
                let name = panel
                    .assets
                    .iter()
                    .chain(panel.features.iter())
                    .map(|c| c.name.clone())
                    .next()
                    .unwrap_or_default();
                return Err(DataError::EmptyColumn(name));
            }
        };
        if end < cal_start || start > cal_end {
            return Err(DataError::DisjointCalendar {
                cal_start,
                cal_end,
                start,
                end,
            });
        }
        let fill = |col: &Column| {
            let values = calendar
                .iter()
                .map(|d| {
                    let at_or_before = panel.dates.partition_point(|x| x <= d);
                    // at_or_before == 0 means a leading gap: backfill
                    col.values[at_or_before.saturating_sub(1)]
                })
                .collect();
            Column::new(col.name.clone(), values)
        };
        assets.extend(panel.assets.iter().map(fill));
        features.extend(panel.features.iter().map(fill));
    }
    PricePanel::new(calendar.to_vec(), assets, features)
}

/// Simple daily returns per asset, one row per date after the first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl ReturnPanel {
    pub fn from_rows(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, DataError> {
        if rows.len() != dates.len() {
            return Err(DataError::Length {
                column: "returns".into(),
                got: rows.len(),
                expected: dates.len(),
            });
        }
        for (d, row) in dates.iter().zip(&rows) {
            if row.len() != assets.len() {
                return Err(DataError::Length {
                    column: format!("returns on {d}"),
                    got: row.len(),
                    expected: assets.len(),
                });
            }
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(DataError::Unordered(w[1]));
            }
        }
        Ok(Self {
            dates,
            assets,
            rows,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// The return series of one asset.
    pub fn column(&self, asset: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[asset]).collect()
    }
}

pub fn simple_returns(panel: &PricePanel) -> Result<ReturnPanel, DataError> {
    if panel.len() < 2 {
        return Err(DataError::TooShort {
            needed: 1,
            got: panel.len(),
        });
    }
    panel.check_positive()?;
    let rows = (1..panel.len())
        .map(|t| {
            panel
                .assets
                .iter()
                .map(|c| c.values[t] / c.values[t - 1] - 1.0)
                .collect()
        })
        .collect();
    ReturnPanel::from_rows(panel.dates[1..].to_vec(), panel.asset_names(), rows)
}

/// A single dated series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl Series {
    pub fn from_column(panel: &PricePanel, name: &str) -> Result<Self, DataError> {
        let col = panel
            .column(name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))?;
        Ok(Self {
            dates: panel.dates.clone(),
            values: col.values.clone(),
        })
    }
}

/// `(x_t / x_{t-period} - 1) * 100`, dropping the first `period` entries.
pub fn yoy_percent_change(series: &Series, period: usize) -> Result<Series, DataError> {
    if period == 0 || series.values.len() <= period {
        return Err(DataError::TooShort {
            needed: period,
            got: series.values.len(),
        });
    }
    if let Some(i) = series.values.iter().position(|&v| v <= 0.0) {
        return Err(DataError::NonPositive {
            column: "indicator".into(),
            date: series.dates[i],
            value: series.values[i],
        });
    }
    let values = (period..series.values.len())
        .map(|t| (series.values[t] / series.values[t - period] - 1.0) * 100.0)
        .collect();
    Ok(Series {
        dates: series.dates[period..].to_vec(),
        values,
    })
}

/// Annualized population standard deviation of the trailing `window` daily
/// returns, dated at the last price of each window.
pub fn rolling_volatility(prices: &Series, window: usize) -> Result<Series, DataError> {
    let n = prices.values.len();
    if window == 0 || n <= window {
        return Err(DataError::TooShort {
            needed: window,
            got: n,
        });
    }
    let returns: Vec<f64> = prices
        .values
        .windows(2)
        .map(|w| w[1] / w[0] - 1.0)
        .collect();
    let values = returns
        .windows(window)
        .map(|w| population_std(w) * TRADING_DAYS.sqrt())
        .collect();
    Ok(Series {
        dates: prices.dates[window..].to_vec(),
        values,
    })
}

/// Population standard deviation; exactly zero for a constant series.
pub(crate) fn population_std(xs: &[f64]) -> f64 {
    if xs.iter().all(|&x| x == xs[0]) {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Which panel series become model inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    #[serde(default = "yes")]
    pub prices: bool,
    #[serde(default = "yes")]
    pub returns: bool,
    #[serde(default)]
    pub exogenous: bool,
}

fn yes() -> bool {
    true
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            prices: true,
            returns: true,
            exogenous: false,
        }
    }
}

/// Model inputs aligned with a [`ReturnPanel`]: row `t` holds what is known at
/// the close of `dates[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    /// Per-feature z-scoring with statistics taken from rows `[0, fit_rows)`.
    /// Zero-variance features are only centred.
    pub fn zscored(&self, fit_rows: usize) -> Self {
        let fit = &self.rows[..fit_rows.min(self.rows.len())];
        let k = self.n_features();
        let mut mean = vec![0.0; k];
        let mut sd = vec![1.0; k];
        if !fit.is_empty() {
            for j in 0..k {
                let col: Vec<f64> = fit.iter().map(|r| r[j]).collect();
                mean[j] = col.iter().sum::<f64>() / col.len() as f64;
                let s = population_std(&col);
                sd[j] = if s > 0.0 { s } else { 1.0 };
            }
        }
        let rows = self
            .rows
            .iter()
            .map(|r| (0..k).map(|j| (r[j] - mean[j]) / sd[j]).collect())
            .collect();
        Self {
            dates: self.dates.clone(),
            names: self.names.clone(),
            rows,
        }
    }
}

/// Builds per-day features from a price panel and its returns: asset prices,
/// asset returns and exogenous columns, each as selected by `spec`.
pub fn build_features(
    panel: &PricePanel,
    returns: &ReturnPanel,
    spec: &FeatureSpec,
) -> Result<FeatureMatrix, DataError> {
    if panel.len() != returns.len() + 1 {
        return Err(DataError::RowMismatch {
            features: panel.len(),
            targets: returns.len() + 1,
        });
    }
    let mut names = Vec::new();
    if spec.prices {
        names.extend(panel.assets.iter().map(|c| format!("{}_price", c.name)));
    }
    if spec.returns {
        names.extend(panel.assets.iter().map(|c| format!("{}_return", c.name)));
    }
    if spec.exogenous {
        names.extend(panel.features.iter().map(|c| c.name.clone()));
    }
    let rows = (0..returns.len())
        .map(|t| {
            let p = t + 1;
            let mut row = Vec::with_capacity(names.len());
            if spec.prices {
                row.extend(panel.assets.iter().map(|c| c.values[p]));
            }
            if spec.returns {
                row.extend_from_slice(&returns.rows[t]);
            }
            if spec.exogenous {
                row.extend(panel.features.iter().map(|c| c.values[p]));
            }
            row
        })
        .collect();
    Ok(FeatureMatrix {
        dates: returns.dates.clone(),
        names,
        rows,
    })
}

#[derive(Debug)]
struct WindowSource {
    features: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    dates: Vec<NaiveDate>,
    n_features: usize,
    n_assets: usize,
}

/// Overlapping stride-1 lookback windows, each paired with the following
/// day's asset returns. Samples share the underlying rows, so splitting and
/// batching never copy windows until a batch tensor is assembled.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    source: Arc<WindowSource>,
    lookback: usize,
    starts: Vec<usize>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn n_features(&self) -> usize {
        self.source.n_features
    }

    pub fn n_assets(&self) -> usize {
        self.source.n_assets
    }

    /// Row index of sample `k`'s target in the source rows.
    pub fn target_row(&self, k: usize) -> usize {
        self.starts[k] + self.lookback
    }

    pub fn target(&self, k: usize) -> &[f64] {
        &self.source.targets[self.target_row(k)]
    }

    /// Date on which sample `k`'s target return is realized.
    pub fn target_date(&self, k: usize) -> NaiveDate {
        self.source.dates[self.target_row(k)]
    }

    /// Last date inside sample `k`'s input window.
    pub fn decision_date(&self, k: usize) -> NaiveDate {
        self.source.dates[self.target_row(k) - 1]
    }

    pub fn window(&self, k: usize) -> &[Vec<f64>] {
        let s = self.starts[k];
        &self.source.features[s..s + self.lookback]
    }

    /// Keeps the samples at the given positions (in that order).
    pub fn subset(&self, positions: &[usize]) -> Self {
        Self {
            source: Arc::clone(&self.source),
            lookback: self.lookback,
            starts: positions.iter().map(|&i| self.starts[i]).collect(),
        }
    }

    /// Keeps samples whose target date lies in `[start, end]`.
    pub fn with_targets_between(&self, start: NaiveDate, end: NaiveDate) -> Self {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&k| {
                let d = self.target_date(k);
                d >= start && d <= end
            })
            .collect();
        self.subset(&keep)
    }

    /// Assembles `(inputs, targets)` tensors of shapes
    /// `batch x lookback x features` and `batch x assets`.
    pub fn batch(&self, positions: &[usize]) -> (Tensor, Tensor) {
        let (l, f, a) = (self.lookback, self.n_features(), self.n_assets());
        let mut x = Vec::with_capacity(positions.len() * l * f);
        let mut y = Vec::with_capacity(positions.len() * a);
        for &k in positions {
            for row in self.window(k) {
                x.extend_from_slice(row);
            }
            y.extend_from_slice(self.target(k));
        }
        (
            Tensor::from_vec(vec![positions.len(), l, f], x).expect("window shape"),
            Tensor::from_vec(vec![positions.len(), a], y).expect("target shape"),
        )
    }

    /// Inputs and targets for every sample, in order.
    pub fn all(&self) -> (Tensor, Tensor) {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }
}

/// Sample `k` covers feature rows `[k, k + lookback)` and targets the return
/// at row `k + lookback`.
pub fn build_windows(
    features: &FeatureMatrix,
    targets: &ReturnPanel,
    lookback: usize,
) -> Result<WindowedDataset, DataError> {
    if lookback == 0 {
        return Err(DataError::ZeroLookback);
    }
    let rows = features.rows.len();
    if rows != targets.len() {
        return Err(DataError::RowMismatch {
            features: rows,
            targets: targets.len(),
        });
    }
    if rows <= lookback {
        return Err(DataError::TooShort {
            needed: lookback,
            got: rows,
        });
    }
    let source = WindowSource {
        features: features.rows.clone(),
        targets: targets.rows.clone(),
        dates: targets.dates.clone(),
        n_features: features.n_features(),
        n_assets: targets.n_assets(),
    };
    Ok(WindowedDataset {
        source: Arc::new(source),
        lookback,
        starts: (0..rows - lookback).collect(),
    })
}

/// Holds out the final `ceil(fraction * N)` samples, in time order, for
/// validation.
pub fn chronological_split(
    dataset: &WindowedDataset,
    validation_fraction: f64,
) -> Result<(WindowedDataset, WindowedDataset), DataError> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(DataError::BadFraction(validation_fraction));
    }
    if dataset.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let n = dataset.len();
    // guard against 0.1 * 100 = 10.000000000000002 style rounding
    let n_val = ((validation_fraction * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let n_val = n_val.min(n);
    let cut = n - n_val;
    let train: Vec<usize> = (0..cut).collect();
    let val: Vec<usize> = (cut..n).collect();
    Ok((dataset.subset(&train), dataset.subset(&val)))
}
