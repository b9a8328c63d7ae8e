//! Benchmark allocations: box-constrained maximum-Sharpe weights re-optimized
//! at each calendar quarter, equal weights, and fixed user weights.

use std::io::Write;

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::ReturnPanel;
use crate::parallel::{self, Execution};
use crate::rng::{self, site};

/// Tolerance on the unit-sum constraint of a weight vector.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocError {
    #[error("infeasible bounds: floor {floor}, cap {cap} for {n} assets")]
    Infeasible { floor: f64, cap: f64, n: usize },
    #[error("need {needed} rows of history before {date}, have {got}")]
    InsufficientHistory {
        needed: usize,
        got: usize,
        date: NaiveDate,
    },
    #[error("lookback must be at least 2 days")]
    ShortLookback,
    #[error("at least one asset is required")]
    NoAssets,
    #[error("weights sum to {0}, not 1")]
    NotUnitSum(f64),
    #[error("weight {0} is negative or non-finite")]
    BadWeight(f64),
    #[error("weight vector has {got} entries for {expected} assets")]
    Dimension { got: usize, expected: usize },
    #[error("test date {0} is not in the return panel")]
    UnknownDate(NaiveDate),
    #[error("empty test range")]
    EmptyRange,
}

/// Long-only weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, AllocError> {
        if weights.is_empty() {
            return Err(AllocError::NoAssets);
        }
        if let Some(&w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(AllocError::BadWeight(w));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(AllocError::NotUnitSum(sum));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Result<Self, AllocError> {
        if n == 0 {
            return Err(AllocError::NoAssets);
        }
        let mut w = vec![1.0 / n as f64; n];
        // push the rounding residue onto the last entry
        let residue = 1.0 - w.iter().sum::<f64>();
        w[n - 1] += residue;
        Ok(Self(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// One weight vector per date.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationSeries {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub weights: Vec<WeightVector>,
}

impl AllocationSeries {
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        weights: Vec<WeightVector>,
    ) -> Result<Self, AllocError> {
        if dates.len() != weights.len() {
            return Err(AllocError::Dimension {
                got: weights.len(),
                expected: dates.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| w.len() != assets.len()) {
            return Err(AllocError::Dimension {
                got: w.len(),
                expected: assets.len(),
            });
        }
        Ok(Self {
            dates,
            assets,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// `date` column plus one weight column per asset.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.assets.iter().cloned());
        w.write_record(&header)?;
        for (d, wv) in self.dates.iter().zip(&self.weights) {
            let mut row = vec![d.to_string()];
            row.extend(wv.as_slice().iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvoConfig {
    /// Trailing window of daily returns used at each reset.
    pub lookback_days: usize,
    pub weight_floor: f64,
    pub weight_cap: f64,
    /// Random restarts in addition to the uniform starting point.
    pub restarts: usize,
    pub restart_seed: u64,
}

impl Default for MvoConfig {
    fn default() -> Self {
        Self {
            lookback_days: 756,
            weight_floor: 0.1,
            weight_cap: 0.9,
            restarts: 50,
            restart_seed: 0,
        }
    }
}

impl MvoConfig {
    pub fn check(&self, n_assets: usize) -> Result<(), AllocError> {
        if n_assets == 0 {
            return Err(AllocError::NoAssets);
        }
        if self.lookback_days < 2 {
            return Err(AllocError::ShortLookback);
        }
        let n = n_assets as f64;
        let ok = self.weight_floor >= 0.0
            && self.weight_floor <= self.weight_cap
            && self.weight_floor * n <= 1.0 + 1e-12
            && self.weight_cap * n >= 1.0 - 1e-12;
        if ok {
            Ok(())
        } else {
            Err(AllocError::Infeasible {
                floor: self.weight_floor,
                cap: self.weight_cap,
                n: n_assets,
            })
        }
    }
}

/// Euclidean projection onto `{w : sum w = 1, lo <= w_i <= hi}`.
///
/// The projection is `clip(v - tau, lo, hi)` for the unique level `tau`
/// making the clipped vector sum to one; `tau` is found by bisection on the
/// monotone water level.
pub fn project_box_simplex(v: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let fill = |tau: f64| -> f64 { v.iter().map(|x| (x - tau).clamp(lo, hi)).sum() };
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    // fill(a) = n*hi >= 1 and fill(b) = n*lo <= 1
    let mut a = min - hi;
    let mut b = max - lo;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if fill(mid) > 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let tau = 0.5 * (a + b);
    let mut w: Vec<f64> = v.iter().map(|x| (x - tau).clamp(lo, hi)).collect();
    // spread the bisection residue over coordinates strictly inside the box
    let residue = 1.0 - w.iter().sum::<f64>();
    let free: Vec<usize> = (0..w.len())
        .filter(|&i| w[i] > lo && w[i] < hi)
        .collect();
    if !free.is_empty() {
        let share = residue / free.len() as f64;
        for i in free {
            w[i] = (w[i] + share).clamp(lo, hi);
        }
    }
    w
}

/// Mean vector and population covariance of the rows.
struct Moments {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl Moments {
    fn of(rows: &[Vec<f64>]) -> Self {
        let n = rows[0].len();
        let t = rows.len() as f64;
        let mut mean = vec![0.0; n];
        for r in rows {
            for i in 0..n {
                mean[i] += r[i];
            }
        }
        mean.iter_mut().for_each(|m| *m /= t);
        let mut cov = vec![vec![0.0; n]; n];
        for r in rows {
            for i in 0..n {
                let di = r[i] - mean[i];
                for j in i..n {
                    cov[i][j] += di * (r[j] - mean[j]);
                }
            }
        }
        for i in 0..n {
            for j in i..n {
                cov[i][j] /= t;
                cov[j][i] = cov[i][j];
            }
        }
        Self { mean, cov }
    }

    fn sigma_w(&self, w: &[f64]) -> Vec<f64> {
        self.cov
            .iter()
            .map(|row| row.iter().zip(w).map(|(c, x)| c * x).sum())
            .collect()
    }

    /// Daily Sharpe of the portfolio, `None` when its variance vanishes.
    fn sharpe(&self, w: &[f64]) -> Option<f64> {
        let var: f64 = self.sigma_w(w).iter().zip(w).map(|(a, b)| a * b).sum();
        if var <= 1e-300 {
            return None;
        }
        let mu: f64 = self.mean.iter().zip(w).map(|(a, b)| a * b).sum();
        Some(mu / var.sqrt())
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let sw = self.sigma_w(w);
        let var: f64 = sw.iter().zip(w).map(|(a, b)| a * b).sum();
        let sd = var.sqrt();
        let mu: f64 = self.mean.iter().zip(w).map(|(a, b)| a * b).sum();
        self.mean
            .iter()
            .zip(&sw)
            .map(|(m, s)| m / sd - mu * s / (sd * var))
            .collect()
    }
}

/// Daily ex-post Sharpe of `weights` applied to `rows`; exposed for oracles.
pub fn portfolio_sharpe(rows: &[Vec<f64>], weights: &[f64]) -> Option<f64> {
    Moments::of(rows).sharpe(weights)
}

const MAX_ITERS: usize = 5_000;
const IMPROVEMENT_TOL: f64 = 1e-10;
const TIE_TOL: f64 = 1e-12;

fn ascend(m: &Moments, start: Vec<f64>, lo: f64, hi: f64) -> Option<(Vec<f64>, f64)> {
    let mut w = project_box_simplex(&start, lo, hi);
    let mut f = m.sharpe(&w)?;
    let mut step = 1.0;
    for _ in 0..MAX_ITERS {
        let g = m.gradient(&w);
        let mut accepted = None;
        while step > 1e-16 {
            let cand: Vec<f64> = w.iter().zip(&g).map(|(x, d)| x + step * d).collect();
            let cand = project_box_simplex(&cand, lo, hi);
            match m.sharpe(&cand) {
                Some(fc) if fc > f => {
                    accepted = Some((cand, fc));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((cand, fc)) = accepted else { break };
        let gain = fc - f;
        w = cand;
        f = fc;
        step = (step * 2.0).min(1e6);
        if gain < IMPROVEMENT_TOL {
            break;
        }
    }
    Some((w, f))
}

fn random_simplex_point<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Box-constrained maximum-Sharpe weights over the whole of `history`
/// (rows = days, columns = assets).
///
/// Projected-gradient ascent from the uniform point and `config.restarts`
/// random simplex points; the uniform start wins ties. A history on which
/// every portfolio has zero variance yields the uniform point.
pub fn mvo_weights(history: &[Vec<f64>], config: &MvoConfig) -> Result<WeightVector, AllocError> {
    let n = history.first().map(Vec::len).unwrap_or(0);
    config.check(n)?;
    if history.len() < 2 {
        return Err(AllocError::InsufficientHistory {
            needed: 2,
            got: history.len(),
            date: NaiveDate::MIN,
        });
    }
    let (lo, hi) = (config.weight_floor, config.weight_cap);
    let m = Moments::of(history);
    let uniform = vec![1.0 / n as f64; n];

    let mut best: Option<(Vec<f64>, f64)> = ascend(&m, uniform.clone(), lo, hi);
    let mut rng = rng::stream(config.restart_seed, site::MVO_RESTARTS);
    for _ in 0..config.restarts {
        let start = random_simplex_point(&mut rng, n);
        if let Some((w, f)) = ascend(&m, start, lo, hi) {
            match &best {
                Some((_, fb)) if f <= fb + TIE_TOL => {}
                _ => best = Some((w, f)),
            }
        }
    }
    let w = best
        .map(|(w, _)| w)
        .unwrap_or_else(|| project_box_simplex(&uniform, lo, hi));
    WeightVector::new(w)
}

/// Positions in `dates` that open a new calendar quarter. The first date
/// always counts.
pub fn quarter_starts(dates: &[NaiveDate]) -> Vec<usize> {
    let quarter = |d: &NaiveDate| (d.year(), d.month0() / 3);
    (0..dates.len())
        .filter(|&i| i == 0 || quarter(&dates[i]) != quarter(&dates[i - 1]))
        .collect()
}

/// Quarterly re-optimized weights for every date in `test_dates`.
///
/// At the first test date of each quarter, weights are fitted on the
/// `lookback_days` return rows strictly before that date and held until the
/// next quarter. Resets are independent and run under `exec`.
pub fn mvo_schedule(
    returns: &ReturnPanel,
    config: &MvoConfig,
    test_dates: &[NaiveDate],
    exec: Execution,
) -> Result<AllocationSeries, AllocError> {
    if test_dates.is_empty() {
        return Err(AllocError::EmptyRange);
    }
    config.check(returns.n_assets())?;
    let starts = quarter_starts(test_dates);
    let rows = returns.rows();
    let fits = parallel::map_slice(exec, &starts, |&s| {
        let date = test_dates[s];
        let idx = returns
            .dates()
            .binary_search(&date)
            .map_err(|_| AllocError::UnknownDate(date))?;
        if idx < config.lookback_days {
            return Err(AllocError::InsufficientHistory {
                needed: config.lookback_days,
                got: idx,
                date,
            });
        }
        mvo_weights(&rows[idx - config.lookback_days..idx], config)
    });
    let fits = fits.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut weights = Vec::with_capacity(test_dates.len());
    for (k, &s) in starts.iter().enumerate() {
        let end = starts.get(k + 1).copied().unwrap_or(test_dates.len());
        weights.extend(std::iter::repeat(fits[k].clone()).take(end - s));
    }
    AllocationSeries::new(test_dates.to_vec(), returns.assets().to_vec(), weights)
}

pub fn balanced_weights(
    assets: &[String],
    dates: &[NaiveDate],
) -> Result<AllocationSeries, AllocError> {
    let w = WeightVector::uniform(assets.len())?;
    fixed_weights(&w, assets, dates)
}

pub fn fixed_weights(
    weights: &WeightVector,
    assets: &[String],
    dates: &[NaiveDate],
) -> Result<AllocationSeries, AllocError> {
    if weights.len() != assets.len() {
        return Err(AllocError::Dimension {
            got: weights.len(),
            expected: assets.len(),
        });
    }
    AllocationSeries::new(
        dates.to_vec(),
        assets.to_vec(),
        vec![weights.clone(); dates.len()],
    )
}
