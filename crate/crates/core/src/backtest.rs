//! Walk-forward backtests: biennial retraining, daily weights, transaction
//! costs, report files and strategy comparison.
//!
//! Timing convention: every daily row is labeled by the date on which its
//! return is realized. The weights on row `t` were decided from data through
//! the previous trading day and earn the asset returns of day `t`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ParameterSet;
use crate::benchmarks::{
    balanced_weights, fixed_weights, mvo_schedule, AllocError, AllocationSeries, MvoConfig,
    WeightVector,
};
use crate::market_data::{
    build_features, build_windows, simple_returns, DataError, FeatureSpec, PricePanel, ReturnPanel,
};
use crate::metrics::{self, MetricError, MetricTable, RollingSharpeSeries};
use crate::models::ModelConfig;
use crate::parallel::{self, Execution};
use crate::rng::derive_seed;
use crate::stats::{self, Alternative, SampleSummary, StatError, TestResult};
use crate::training::{self, fit, predict_weights, TrainConfig, TrainError, TrainLog};

/// Transaction cost per unit of turnover (0.01%).
pub const DEFAULT_COST_RATE: f64 = 0.0001;
/// One trading year.
pub const DEFAULT_ROLLING_WINDOW: usize = 252;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("panel has no return rows for test segment {start}..{end}")]
    Uncovered { start: NaiveDate, end: NaiveDate },
    #[error("not enough history before {date}: the first test day needs a full {lookback}-day window")]
    InsufficientHistory { date: NaiveDate, lookback: usize },
    #[error("calendar mismatch: {0}")]
    Calendar(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("replicate run {run} has an undefined Sharpe ratio")]
    UndefinedSharpe { run: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BacktestError + '_ {
    move |source| BacktestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> BacktestError + '_ {
    move |source| BacktestError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// One retraining period. Dates are calendar bounds, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkForwardSchedule {
    pub segments: Vec<Segment>,
}

impl WalkForwardSchedule {
    pub fn test_start(&self) -> NaiveDate {
        self.segments[0].test_start
    }

    pub fn test_end(&self) -> NaiveDate {
        self.segments[self.segments.len() - 1].test_end
    }

    /// Dates of `dates` inside the overall test range.
    pub fn test_dates(&self, dates: &[NaiveDate]) -> Vec<NaiveDate> {
        let (s, e) = (self.test_start(), self.test_end());
        dates.iter().copied().filter(|d| *d >= s && *d <= e).collect()
    }
}

/// Test windows of `retrain_years` calendar years starting at `first_test`,
/// the last one clipped at `end`. Every segment trains on everything from
/// `data_start` up to the day before its test window.
pub fn make_schedule(
    data_start: NaiveDate,
    first_test: NaiveDate,
    end: NaiveDate,
    retrain_years: u32,
) -> Result<WalkForwardSchedule, BacktestError> {
    if retrain_years == 0 {
        return Err(BacktestError::Schedule("retrain interval must be at least one year".into()));
    }
    if data_start >= first_test {
        return Err(BacktestError::Schedule(format!(
            "data start {data_start} is not before the first test date {first_test}"
        )));
    }
    if first_test > end {
        return Err(BacktestError::Schedule(format!(
            "empty test range {first_test}..{end}"
        )));
    }
    let mut segments = Vec::new();
    let mut k = 0u32;
    loop {
        let start = first_test
            .checked_add_months(Months::new(12 * retrain_years * k))
            .ok_or_else(|| BacktestError::Schedule("date overflow".into()))?;
        if start > end {
            break;
        }
        let next = first_test
            .checked_add_months(Months::new(12 * retrain_years * (k + 1)))
            .ok_or_else(|| BacktestError::Schedule("date overflow".into()))?;
        let test_end = (next - chrono::Duration::days(1)).min(end);
        segments.push(Segment {
            train_start: data_start,
            train_end: start - chrono::Duration::days(1),
            test_start: start,
            test_end,
        });
        k += 1;
    }
    Ok(WalkForwardSchedule { segments })
}

/// Phase-1 data and settings of the pretrain/fine-tune workflow.
#[derive(Debug, Clone)]
pub struct Pretrain {
    pub panel: PricePanel,
    pub train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct NeuralStrategy {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub features: FeatureSpec,
    pub pretrain: Option<Pretrain>,
}

#[derive(Debug, Clone)]
pub enum Strategy {
    Neural(Box<NeuralStrategy>),
    Mvo(MvoConfig),
    Balanced,
    Fixed(Vec<f64>),
}

impl Strategy {
    pub fn is_neural(&self) -> bool {
        matches!(self, Self::Neural(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestOptions {
    pub cost_rate: f64,
    pub rolling_window: usize,
    pub exec: Execution,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self {
            cost_rate: DEFAULT_COST_RATE,
            rolling_window: DEFAULT_ROLLING_WINDOW,
            exec: Execution::Parallel,
        }
    }
}

/// Training diagnostics of a neural run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub pretrain: Option<TrainLog>,
    pub segments: Vec<TrainLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub name: String,
    pub dates: Vec<NaiveDate>,
    pub gross: Vec<f64>,
    pub cost: Vec<f64>,
    pub net: Vec<f64>,
    pub turnover: Vec<f64>,
    pub allocations: AllocationSeries,
    pub metrics: MetricTable,
    pub rolling_sharpe: RollingSharpeSeries,
    pub training: Option<TrainingRecord>,
}

/// `sum |a_i - b_i|`.
pub fn turnover(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

impl BacktestReport {
    /// Applies `allocations` to the matching rows of `returns` and charges
    /// `cost_rate` per unit of turnover. The first day has no turnover.
    pub fn from_allocations(
        name: &str,
        allocations: AllocationSeries,
        returns: &ReturnPanel,
        cost_rate: f64,
        rolling_window: usize,
    ) -> Result<Self, BacktestError> {
        if returns.assets() != allocations.assets.as_slice() {
            return Err(BacktestError::Calendar(format!(
                "allocation assets {:?} differ from return assets {:?}",
                allocations.assets,
                returns.assets()
            )));
        }
        let mut gross = Vec::with_capacity(allocations.len());
        let mut cost = Vec::with_capacity(allocations.len());
        let mut turn = Vec::with_capacity(allocations.len());
        for (i, (d, w)) in allocations.dates.iter().zip(&allocations.weights).enumerate() {
            let row = returns
                .dates()
                .binary_search(d)
                .map_err(|_| BacktestError::Calendar(format!("no returns on {d}")))?;
            let r = &returns.rows()[row];
            gross.push(w.as_slice().iter().zip(r).map(|(a, b)| a * b).sum());
            let t = if i == 0 {
                0.0
            } else {
                turnover(w.as_slice(), allocations.weights[i - 1].as_slice())
            };
            turn.push(t);
            cost.push(cost_rate * t);
        }
        Self::from_series(name, allocations, gross, cost, turn, rolling_window)
    }

    fn from_series(
        name: &str,
        allocations: AllocationSeries,
        gross: Vec<f64>,
        cost: Vec<f64>,
        turnover: Vec<f64>,
        rolling_window: usize,
    ) -> Result<Self, BacktestError> {
        let net: Vec<f64> = gross.iter().zip(&cost).map(|(g, c)| g - c).collect();
        let dates = allocations.dates.clone();
        let metrics = MetricTable::from_returns(&net)?;
        let rolling_sharpe = match metrics::rolling_sharpe(&dates, &net, rolling_window) {
            Ok(r) => r,
            Err(MetricError::TooFew { .. }) => {
                log::warn!(
                    "{name}: {} test days is shorter than the {rolling_window}-day rolling window",
                    net.len()
                );
                RollingSharpeSeries {
                    dates: Vec::new(),
                    values: Vec::new(),
                    window: rolling_window,
                }
            }
            Err(e) => return Err(e.into()),
        };
        Ok(Self {
            name: name.to_string(),
            dates,
            gross,
            cost,
            net,
            turnover,
            allocations,
            metrics,
            rolling_sharpe,
            training: None,
        })
    }

    pub fn sharpe(&self) -> Option<f64> {
        self.metrics.sharpe
    }
}

/// Runs one strategy over the schedule's test range. `seed` drives every
/// stochastic step of neural strategies (segment `k` trains with a seed
/// derived from `seed` and `k`); benchmarks ignore it.
pub fn run_strategy(
    name: &str,
    strategy: &Strategy,
    panel: &PricePanel,
    schedule: &WalkForwardSchedule,
    seed: u64,
    options: &BacktestOptions,
) -> Result<BacktestReport, BacktestError> {
    if schedule.segments.is_empty() {
        return Err(BacktestError::Schedule("no segments".into()));
    }
    if !(options.cost_rate >= 0.0 && options.cost_rate.is_finite()) {
        return Err(BacktestError::Invalid(format!(
            "cost rate must be non-negative, got {}",
            options.cost_rate
        )));
    }
    panel.check_positive()?;
    let returns = simple_returns(panel)?;
    let test_dates = schedule.test_dates(returns.dates());
    for seg in &schedule.segments {
        let covered = test_dates
            .iter()
            .any(|d| *d >= seg.test_start && *d <= seg.test_end);
        if !covered {
            return Err(BacktestError::Uncovered {
                start: seg.test_start,
                end: seg.test_end,
            });
        }
    }
    let assets = returns.assets().to_vec();
    let mut training = None;
    let allocations = match strategy {
        Strategy::Balanced => balanced_weights(&assets, &test_dates)?,
        Strategy::Fixed(w) => fixed_weights(&WeightVector::new(w.clone())?, &assets, &test_dates)?,
        Strategy::Mvo(cfg) => mvo_schedule(&returns, cfg, &test_dates, options.exec)?,
        Strategy::Neural(n) => {
            let (alloc, record) = run_neural(n, panel, &returns, schedule, seed, options.exec)?;
            training = Some(record);
            alloc
        }
    };
    let mut report = BacktestReport::from_allocations(
        name,
        allocations,
        &returns,
        options.cost_rate,
        options.rolling_window,
    )?;
    report.training = training;
    Ok(report)
}

fn segment_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, k as u64 + 1)
}

fn run_neural(
    strategy: &NeuralStrategy,
    panel: &PricePanel,
    returns: &ReturnPanel,
    schedule: &WalkForwardSchedule,
    seed: u64,
    exec: Execution,
) -> Result<(AllocationSeries, TrainingRecord), BacktestError> {
    let model = &strategy.model;
    let lookback = model.lookback();
    let features = build_features(panel, returns, &strategy.features)?;

    let (init, pretrain_log) = match &strategy.pretrain {
        Some(p) => {
            let pre_returns = simple_returns(&p.panel)?;
            let mut pre_features = build_features(&p.panel, &pre_returns, &strategy.features)?;
            let cfg = TrainConfig {
                seed: derive_seed(seed, 0),
                ..p.train.clone()
            };
            if cfg.zscore {
                pre_features = pre_features.zscored(pre_features.rows.len());
            }
            let ds = build_windows(&pre_features, &pre_returns, lookback)?;
            log::info!("pretraining on {} windows", ds.len());
            let (params, log) = training::train(model, &ds, &cfg)?;
            (Some(params), Some(log))
        }
        None => (None, None),
    };

    let results = parallel::map_indices(exec, schedule.segments.len(), |k| {
        let seg = &schedule.segments[k];
        let train_rows = returns.dates().partition_point(|d| *d <= seg.train_end);
        let feats = if strategy.train.zscore {
            features.zscored(train_rows)
        } else {
            features.clone()
        };
        let ds = build_windows(&feats, returns, lookback)?;
        let train_ds = ds.with_targets_between(seg.train_start, seg.train_end);
        let test_ds = ds.with_targets_between(seg.test_start, seg.test_end);
        let expected = returns
            .dates()
            .iter()
            .filter(|d| **d >= seg.test_start && **d <= seg.test_end)
            .count();
        if test_ds.len() < expected {
            return Err(BacktestError::InsufficientHistory {
                date: seg.test_start,
                lookback,
            });
        }
        let cfg = TrainConfig {
            seed: segment_seed(seed, k),
            ..strategy.train.clone()
        };
        log::info!(
            "segment {}: training on {} windows through {}, testing {}..{}",
            k + 1,
            train_ds.len(),
            seg.train_end,
            seg.test_start,
            seg.test_end
        );
        let (params, log): (ParameterSet, TrainLog) = match &init {
            Some(p) => fit(model, p.clone(), &train_ds, &cfg, true)?,
            None => training::train(model, &train_ds, &cfg)?,
        };
        let weights = predict_weights(model, &params, &test_ds)?;
        let dates: Vec<NaiveDate> = (0..test_ds.len()).map(|i| test_ds.target_date(i)).collect();
        Ok::<_, BacktestError>((dates, weights, log))
    });

    let mut dates = Vec::new();
    let mut weights = Vec::new();
    let mut logs = Vec::new();
    for r in results {
        let (d, w, l) = r?;
        dates.extend(d);
        for row in w {
            weights.push(WeightVector::new(row)?);
        }
        logs.push(l);
    }
    let alloc = AllocationSeries::new(dates, returns.assets().to_vec(), weights)?;
    Ok((
        alloc,
        TrainingRecord {
            pretrain: pretrain_log,
            segments: logs,
        },
    ))
}

/// Reference for the replicate z-test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Sample(Vec<f64>),
    Summary(SampleSummary),
}

#[derive(Debug, Clone)]
pub struct ReplicateReport {
    pub seeds: Vec<u64>,
    pub reports: Vec<BacktestReport>,
    pub sharpes: Vec<f64>,
    pub z_test: Option<TestResult>,
}

/// Seeds for `n` replicate runs derived from `base_seed`.
pub fn replicate_seeds(base_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(base_seed, i)).collect()
}

/// Runs the strategy once per seed (in parallel) and z-tests the per-run
/// full-period Sharpe ratios against `reference`.
pub fn replicate_runs(
    name: &str,
    strategy: &Strategy,
    panel: &PricePanel,
    schedule: &WalkForwardSchedule,
    seeds: &[u64],
    reference: Option<&Reference>,
    options: &BacktestOptions,
) -> Result<ReplicateReport, BacktestError> {
    if seeds.len() < 2 {
        return Err(BacktestError::Invalid(format!(
            "need at least 2 replicate runs, got {}",
            seeds.len()
        )));
    }
    // segments inside a run stay sequential; runs are the parallel unit
    let inner = BacktestOptions {
        exec: Execution::Sequential,
        ..*options
    };
    let reports = parallel::map_slice(options.exec, seeds, |&s| {
        run_strategy(&format!("{name}-{s}"), strategy, panel, schedule, s, &inner)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let sharpes = reports
        .iter()
        .enumerate()
        .map(|(i, r)| r.sharpe().ok_or(BacktestError::UndefinedSharpe { run: i }))
        .collect::<Result<Vec<_>, _>>()?;
    let z_test = match reference {
        None => None,
        Some(Reference::Sample(s)) => Some(stats::z_test_two_sample(&sharpes, s)?),
        Some(Reference::Summary(s)) => Some(stats::z_test_against_summary(&sharpes, *s)?),
    };
    Ok(ReplicateReport {
        seeds: seeds.to_vec(),
        reports,
        sharpes,
        z_test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonBlock {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    /// Two-sided test on the defined rolling-Sharpe values.
    pub mann_whitney: Option<TestResult>,
    /// One-sided: strategy rolling Sharpe stochastically greater.
    pub mann_whitney_greater: Option<TestResult>,
    /// Why the tests could not be run, if they were not.
    pub test_error: Option<String>,
    /// Fraction of days the strategy's rolling Sharpe is above the baseline's.
    pub outperformance: Option<f64>,
    /// Fraction of days the baseline's rolling Sharpe is above the strategy's.
    pub underperformance: Option<f64>,
    pub strategy_mean_rolling_sharpe: Option<f64>,
    pub baseline_mean_rolling_sharpe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub strategy: String,
    pub baseline: String,
    pub full: ComparisonBlock,
    pub zoom: Option<ComparisonBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub name: String,
    pub mean_rolling_sharpe: Option<f64>,
    pub mean_rolling_sharpe_zoom: Option<f64>,
    pub metrics: MetricTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: String,
    pub zoom_start: Option<NaiveDate>,
    pub rolling_window: usize,
    pub strategies: Vec<StrategySummary>,
    pub comparisons: Vec<PairwiseComparison>,
}

impl ComparisonReport {
    /// Metric tables side by side, one column per strategy.
    pub fn write_metrics_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let tables: Vec<(String, MetricTable)> = self
            .strategies
            .iter()
            .map(|s| (s.name.clone(), s.metrics.clone()))
            .collect();
        metrics::write_metric_csv(out, &tables)
    }
}

fn compare_block(
    strategy: &RollingSharpeSeries,
    baseline: &RollingSharpeSeries,
    start: Option<NaiveDate>,
) -> ComparisonBlock {
    let (a, b) = match start {
        Some(s) => (strategy.since(s), baseline.since(s)),
        None => (strategy.clone(), baseline.clone()),
    };
    let (xs, ys) = (a.defined(), b.defined());
    let mut block = ComparisonBlock {
        start: a.dates.first().copied(),
        end: a.dates.last().copied(),
        mann_whitney: None,
        mann_whitney_greater: None,
        test_error: None,
        outperformance: stats::outperformance_fraction(&a, &b).ok(),
        underperformance: stats::outperformance_fraction(&b, &a).ok(),
        strategy_mean_rolling_sharpe: a.mean(),
        baseline_mean_rolling_sharpe: b.mean(),
    };
    let two = stats::mann_whitney_u(&xs, &ys, Alternative::TwoSided);
    let greater = stats::mann_whitney_u(&xs, &ys, Alternative::Greater);
    match (two, greater) {
        (Ok(t), Ok(g)) => {
            block.mann_whitney = Some(t);
            block.mann_whitney_greater = Some(g);
        }
        (Err(e), _) | (_, Err(e)) => block.test_error = Some(e.to_string()),
    }
    block
}

/// Tests every report other than the baseline against it, on the full test
/// period and, with `zoom_start`, from that date on.
pub fn compare(
    reports: &[BacktestReport],
    baseline: &str,
    zoom_start: Option<NaiveDate>,
) -> Result<ComparisonReport, BacktestError> {
    let base_idx = reports
        .iter()
        .position(|r| r.name == baseline)
        .ok_or_else(|| BacktestError::Invalid(format!("no report named `{baseline}`")))?;
    let base = &reports[base_idx];
    for r in reports {
        if r.dates != base.dates {
            return Err(BacktestError::Calendar(format!(
                "`{}` and `{}` cover different dates",
                r.name, base.name
            )));
        }
    }
    let window = base.rolling_sharpe.window;
    if let Some(r) = reports.iter().find(|r| r.rolling_sharpe.window != window) {
        return Err(BacktestError::Invalid(format!(
            "`{}` uses a {}-day rolling window, baseline uses {window}",
            r.name, r.rolling_sharpe.window
        )));
    }
    let strategies = reports
        .iter()
        .map(|r| StrategySummary {
            name: r.name.clone(),
            mean_rolling_sharpe: r.rolling_sharpe.mean(),
            mean_rolling_sharpe_zoom: zoom_start.and_then(|z| r.rolling_sharpe.since(z).mean()),
            metrics: r.metrics.clone(),
        })
        .collect();
    let comparisons = reports
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != base_idx)
        .map(|(_, r)| PairwiseComparison {
            strategy: r.name.clone(),
            baseline: base.name.clone(),
            full: compare_block(&r.rolling_sharpe, &base.rolling_sharpe, None),
            zoom: zoom_start.map(|z| compare_block(&r.rolling_sharpe, &base.rolling_sharpe, Some(z))),
        })
        .collect();
    Ok(ComparisonReport {
        baseline: baseline.to_string(),
        zoom_start,
        rolling_window: window,
        strategies,
        comparisons,
    })
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const RETURNS_FILE: &str = "returns.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const ROLLING_FILE: &str = "rolling_sharpe.csv";
pub const COMPARISON_FILE: &str = "comparison.json";

fn create(path: &Path) -> Result<fs::File, BacktestError> {
    fs::File::create(path).map_err(io_err(path))
}

/// Writes the report files into `dir` (created if needed) and returns the
/// paths written.
pub fn write_report(report: &BacktestReport, dir: &Path) -> Result<Vec<PathBuf>, BacktestError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let path = dir.join(METRICS_FILE);
    metrics::write_metric_csv(create(&path)?, &[(report.name.clone(), report.metrics.clone())])
        .map_err(csv_err(&path))?;
    written.push(path);

    // shortest round-trip formatting keeps files exact and byte-stable
    let path = dir.join(RETURNS_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut rows = || -> Result<(), csv::Error> {
        w.write_record(["date", "gross", "net", "cost"])?;
        for i in 0..report.dates.len() {
            w.write_record([
                report.dates[i].to_string(),
                report.gross[i].to_string(),
                report.net[i].to_string(),
                report.cost[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    rows().map_err(csv_err(&path))?;
    written.push(path);

    let path = dir.join(WEIGHTS_FILE);
    report
        .allocations
        .write_csv(create(&path)?)
        .map_err(csv_err(&path))?;
    written.push(path);

    let path = dir.join(ROLLING_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut rows = || -> Result<(), csv::Error> {
        w.write_record(["date", "rolling_sharpe"])?;
        for (d, v) in report.rolling_sharpe.dates.iter().zip(&report.rolling_sharpe.values) {
            w.write_record([d.to_string(), v.map(|x| x.to_string()).unwrap_or_default()])?;
        }
        w.flush()?;
        Ok(())
    };
    rows().map_err(csv_err(&path))?;
    written.push(path);

    if let Some(t) = &report.training {
        if let Some(l) = &t.pretrain {
            let path = dir.join("train_log_pretrain.csv");
            l.write_csv(create(&path)?).map_err(io_err(&path))?;
            written.push(path);
        }
        for (k, l) in t.segments.iter().enumerate() {
            let path = dir.join(format!("train_log_segment{}.csv", k + 1));
            l.write_csv(create(&path)?).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T, BacktestError> {
    s.parse().map_err(|_| BacktestError::Parse {
        path: path.to_path_buf(),
        detail: format!("line {line}: cannot parse `{s}`"),
    })
}

/// Rebuilds a report from the `returns.csv` and `weights.csv` in `dir`.
pub fn load_report(dir: &Path, name: &str, rolling_window: usize) -> Result<BacktestReport, BacktestError> {
    let path = dir.join(RETURNS_FILE);
    let mut rdr = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
    let (mut dates, mut gross, mut cost) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(&path))?;
        if rec.len() < 4 {
            return Err(BacktestError::Parse {
                path: path.clone(),
                detail: format!("line {}: expected date,gross,net,cost", i + 2),
            });
        }
        dates.push(parse_field::<NaiveDate>(&path, i + 2, &rec[0])?);
        gross.push(parse_field::<f64>(&path, i + 2, &rec[1])?);
        cost.push(parse_field::<f64>(&path, i + 2, &rec[3])?);
    }

    let wpath = dir.join(WEIGHTS_FILE);
    let mut rdr = csv::Reader::from_path(&wpath).map_err(csv_err(&wpath))?;
    let assets: Vec<String> = rdr
        .headers()
        .map_err(csv_err(&wpath))?
        .iter()
        .skip(1)
        .map(String::from)
        .collect();
    let (mut wdates, mut weights) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(&wpath))?;
        wdates.push(parse_field::<NaiveDate>(&wpath, i + 2, &rec[0])?);
        let row = rec
            .iter()
            .skip(1)
            .map(|s| parse_field::<f64>(&wpath, i + 2, s))
            .collect::<Result<Vec<_>, _>>()?;
        weights.push(WeightVector::new(row)?);
    }
    if wdates != dates {
        return Err(BacktestError::Calendar(format!(
            "{} and {} cover different dates",
            path.display(),
            wpath.display()
        )));
    }
    let turn = (0..weights.len())
        .map(|i| {
            if i == 0 {
                0.0
            } else {
                turnover(weights[i].as_slice(), weights[i - 1].as_slice())
            }
        })
        .collect();
    let alloc = AllocationSeries::new(dates, assets, weights)?;
    BacktestReport::from_series(name, alloc, gross, cost, turn, rolling_window)
}
