//! Portfolio performance metrics on daily simple returns.
//!
//! Conventions shared by every function here: 252 trading days per year,
//! population (1/N) standard deviation, zero risk-free rate and a zero
//! downside target.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{population_std, TRADING_DAYS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("return series has zero variance")]
    ZeroVariance,
    #[error("return {0} at index {1} is not above -1")]
    Ruin(f64, usize),
    #[error("downside deviation is zero")]
    ZeroDownside,
    #[error("series has no {0} days")]
    OneSided(&'static str),
    #[error("{dates} dates for {values} returns")]
    DateMismatch { dates: usize, values: usize },
}

fn require(returns: &[f64], needed: usize) -> Result<(), MetricError> {
    if returns.len() < needed {
        Err(MetricError::TooFew {
            needed,
            got: returns.len(),
        })
    } else {
        Ok(())
    }
}

fn require_solvent(returns: &[f64]) -> Result<(), MetricError> {
    match returns.iter().position(|&r| r <= -1.0) {
        Some(i) => Err(MetricError::Ruin(returns[i], i)),
        None => Ok(()),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Annualized Sharpe ratio, `mean(r - rf) / std(r) * sqrt(252)`.
pub fn sharpe(returns: &[f64], risk_free: f64) -> Result<f64, MetricError> {
    require(returns, 2)?;
    let sd = population_std(returns);
    if sd == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let excess = mean(returns) - risk_free;
    Ok(excess / sd * TRADING_DAYS.sqrt())
}

pub fn cumulative_return(returns: &[f64]) -> Result<f64, MetricError> {
    require(returns, 1)?;
    require_solvent(returns)?;
    Ok(returns.iter().map(|r| 1.0 + r).product::<f64>() - 1.0)
}

/// Geometric annualization of the cumulative return over N days.
pub fn annualized_return(returns: &[f64]) -> Result<f64, MetricError> {
    let total = cumulative_return(returns)?;
    Ok((1.0 + total).powf(TRADING_DAYS / returns.len() as f64) - 1.0)
}

pub fn annualized_volatility(returns: &[f64]) -> Result<f64, MetricError> {
    require(returns, 2)?;
    Ok(population_std(returns) * TRADING_DAYS.sqrt())
}

/// Root mean square of shortfalls below zero over all N days, annualized.
pub fn downside_deviation(returns: &[f64]) -> Result<f64, MetricError> {
    require(returns, 1)?;
    let sq: f64 = returns.iter().map(|&r| r.min(0.0).powi(2)).sum();
    Ok((sq / returns.len() as f64).sqrt() * TRADING_DAYS.sqrt())
}

pub fn sortino(returns: &[f64]) -> Result<f64, MetricError> {
    let dd = downside_deviation(returns)?;
    if dd == 0.0 {
        return Err(MetricError::ZeroDownside);
    }
    Ok(annualized_return(returns)? / dd)
}

/// Largest peak-to-trough loss of the compounded wealth path, as a positive
/// fraction. The starting wealth of 1 counts as a peak.
pub fn max_drawdown(returns: &[f64]) -> Result<f64, MetricError> {
    require(returns, 1)?;
    require_solvent(returns)?;
    let mut wealth = 1.0_f64;
    let mut peak = 1.0_f64;
    let mut worst = 0.0_f64;
    for r in returns {
        wealth *= 1.0 + r;
        peak = peak.max(wealth);
        worst = worst.max(1.0 - wealth / peak);
    }
    Ok(worst)
}

pub fn pct_positive(returns: &[f64]) -> Result<f64, MetricError> {
    require(returns, 1)?;
    Ok(returns.iter().filter(|&&r| r > 0.0).count() as f64 / returns.len() as f64)
}

pub fn avg_profit_over_avg_loss(returns: &[f64]) -> Result<f64, MetricError> {
    let gains: Vec<f64> = returns.iter().copied().filter(|&r| r > 0.0).collect();
    let losses: Vec<f64> = returns.iter().copied().filter(|&r| r < 0.0).collect();
    if gains.is_empty() {
        return Err(MetricError::OneSided("positive"));
    }
    if losses.is_empty() {
        return Err(MetricError::OneSided("negative"));
    }
    Ok(mean(&gains) / mean(&losses).abs())
}

/// Row labels of the metric table, in report order.
pub const METRIC_LABELS: [&str; 9] = [
    "Cumulative Return",
    "Annual Return",
    "Annual Volatility",
    "Sharpe Ratio",
    "Downside Deviation",
    "Sortino",
    "Max Drawdown",
    "% of + Return",
    "Ave P/Ave L",
];

/// The nine summary metrics of one return series. Ratios that are undefined
/// for the series (zero variance, no losing days, ...) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    #[serde(rename = "Cumulative Return")]
    pub cumulative_return: f64,
    #[serde(rename = "Annual Return")]
    pub annual_return: f64,
    #[serde(rename = "Annual Volatility")]
    pub annual_volatility: f64,
    #[serde(rename = "Sharpe Ratio")]
    pub sharpe: Option<f64>,
    #[serde(rename = "Downside Deviation")]
    pub downside_deviation: f64,
    #[serde(rename = "Sortino")]
    pub sortino: Option<f64>,
    #[serde(rename = "Max Drawdown")]
    pub max_drawdown: f64,
    #[serde(rename = "% of + Return")]
    pub pct_positive: f64,
    #[serde(rename = "Ave P/Ave L")]
    pub avg_profit_over_avg_loss: Option<f64>,
}

impl MetricTable {
    pub fn from_returns(returns: &[f64]) -> Result<Self, MetricError> {
        require(returns, 2)?;
        Ok(Self {
            cumulative_return: cumulative_return(returns)?,
            annual_return: annualized_return(returns)?,
            annual_volatility: annualized_volatility(returns)?,
            sharpe: sharpe(returns, 0.0).ok(),
            downside_deviation: downside_deviation(returns)?,
            sortino: sortino(returns).ok(),
            max_drawdown: max_drawdown(returns)?,
            pct_positive: pct_positive(returns)?,
            avg_profit_over_avg_loss: avg_profit_over_avg_loss(returns).ok(),
        })
    }

    /// Values in [`METRIC_LABELS`] order.
    pub fn values(&self) -> [Option<f64>; 9] {
        [
            Some(self.cumulative_return),
            Some(self.annual_return),
            Some(self.annual_volatility),
            self.sharpe,
            Some(self.downside_deviation),
            self.sortino,
            Some(self.max_drawdown),
            Some(self.pct_positive),
            self.avg_profit_over_avg_loss,
        ]
    }
}

/// Writes tables side by side: one row per metric, one column per strategy.
/// Undefined entries are left empty.
pub fn write_metric_csv<W: std::io::Write>(
    out: W,
    tables: &[(String, MetricTable)],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["Measure".to_string()];
    header.extend(tables.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    let columns: Vec<[Option<f64>; 9]> = tables.iter().map(|(_, t)| t.values()).collect();
    for (i, label) in METRIC_LABELS.iter().enumerate() {
        let mut row = vec![label.to_string()];
        row.extend(
            columns
                .iter()
                .map(|c| c[i].map(|v| format!("{v:.6}")).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Trailing-window annualized Sharpe. A window with zero variance has no
/// value (`None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingSharpeSeries {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Option<f64>>,
    pub window: usize,
}

impl RollingSharpeSeries {
    /// Defined values only.
    pub fn defined(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    /// Entries dated on or after `start`.
    pub fn since(&self, start: NaiveDate) -> Self {
        let lo = self.dates.partition_point(|d| *d < start);
        Self {
            dates: self.dates[lo..].to_vec(),
            values: self.values[lo..].to_vec(),
            window: self.window,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        let v = self.defined();
        (!v.is_empty()).then(|| mean(&v))
    }
}

/// Value at index `t` is the Sharpe of `returns[t + 1 - window ..= t]`, dated
/// at `dates[t]`.
pub fn rolling_sharpe(
    dates: &[NaiveDate],
    returns: &[f64],
    window: usize,
) -> Result<RollingSharpeSeries, MetricError> {
    if dates.len() != returns.len() {
        return Err(MetricError::DateMismatch {
            dates: dates.len(),
            values: returns.len(),
        });
    }
    let window = window.max(2);
    require(returns, window)?;
    let values = returns
        .windows(window)
        .map(|w| sharpe(w, 0.0).ok())
        .collect();
    Ok(RollingSharpeSeries {
        dates: dates[window - 1..].to_vec(),
        values,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const RT: f64 = 15.874507866387544; // sqrt(252)

    #[test]
    fn sharpe_examples() {
        assert_eq!(sharpe(&[0.01, -0.01], 0.0).unwrap(), 0.0);
        // mean 0.001, population std 0.01
        let r = [0.011, -0.009];
        assert!((sharpe(&r, 0.0).unwrap() - 0.1 * RT).abs() < 1e-10);
        assert!((0.1 * RT - 1.5875).abs() < 1e-4);
        assert_eq!(sharpe(&[0.01, 0.01], 0.0), Err(MetricError::ZeroVariance));
        assert!(matches!(sharpe(&[0.01], 0.0), Err(MetricError::TooFew { .. })));
    }

    #[test]
    fn cumulative_examples() {
        assert_eq!(cumulative_return(&[0.0; 5]).unwrap(), 0.0);
        assert!((cumulative_return(&[0.01, -0.01]).unwrap() + 0.0001).abs() < 1e-15);
        assert!((cumulative_return(&[0.1, 0.1]).unwrap() - 0.21).abs() < 1e-15);
        assert!(cumulative_return(&[0.1, -1.0]).is_err());
        assert!(cumulative_return(&[]).is_err());
    }

    #[test]
    fn annualized_return_examples() {
        assert_eq!(annualized_return(&[0.0; 252]).unwrap(), 0.0);
        let daily = 1.21f64.powf(1.0 / 252.0) - 1.0;
        assert!((annualized_return(&vec![daily; 252]).unwrap() - 0.21).abs() < 1e-12);
        let daily = 1.21f64.powf(1.0 / 504.0) - 1.0;
        assert!((annualized_return(&vec![daily; 504]).unwrap() - 0.1).abs() < 1e-12);
        assert!(annualized_return(&[]).is_err());
    }

    #[test]
    fn volatility_examples() {
        assert_eq!(annualized_volatility(&[0.003; 10]).unwrap(), 0.0);
        assert!((annualized_volatility(&[0.01, -0.01]).unwrap() - 0.01 * RT).abs() < 1e-14);
        assert!(annualized_volatility(&[0.01]).is_err());
    }

    #[test]
    fn downside_examples() {
        assert_eq!(downside_deviation(&[0.0, 0.01, 0.2]).unwrap(), 0.0);
        let v = downside_deviation(&[0.02, -0.02]).unwrap();
        assert!((v - (0.0004f64 / 2.0).sqrt() * RT).abs() < 1e-14);
        assert!((v - 0.2245).abs() < 1e-4);
        let v = downside_deviation(&[-0.01, -0.01]).unwrap();
        assert!((v - 0.01 * RT).abs() < 1e-14);
    }

    #[test]
    fn sortino_examples() {
        assert_eq!(sortino(&[0.01, 0.02]), Err(MetricError::ZeroDownside));
        // ratio oracle: build a series then compare to the quotient of parts
        let r = [0.02, -0.01, 0.015, -0.005, 0.01];
        let expect = annualized_return(&r).unwrap() / downside_deviation(&r).unwrap();
        assert_eq!(sortino(&r).unwrap(), expect);
        assert!((0.30f64 / 0.10 - 3.0).abs() < 1e-15);
    }

    #[test]
    fn drawdown_examples() {
        assert_eq!(max_drawdown(&[0.01, 0.02, 0.001]).unwrap(), 0.0);
        // wealth 100 -> 80 -> 90
        let dd = max_drawdown(&[-0.2, 0.125]).unwrap();
        assert!((dd - 0.2).abs() < 1e-15);
        assert_eq!(max_drawdown(&[-0.25]).unwrap(), 0.25);
        assert!(max_drawdown(&[]).is_err());
    }

    #[test]
    fn pct_positive_examples() {
        assert_eq!(pct_positive(&[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(pct_positive(&[0.01, -0.01, 0.02]).unwrap(), 2.0 / 3.0);
        assert_eq!(pct_positive(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn profit_loss_examples() {
        assert_eq!(avg_profit_over_avg_loss(&[0.01, -0.01]).unwrap(), 1.0);
        assert_eq!(avg_profit_over_avg_loss(&[0.02, -0.01]).unwrap(), 2.0);
        assert!(avg_profit_over_avg_loss(&[0.02, 0.01]).is_err());
        assert!(avg_profit_over_avg_loss(&[-0.02, 0.0]).is_err());
    }

    fn dates(n: usize) -> Vec<NaiveDate> {
        let s = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        (0..n).map(|i| s + chrono::Duration::days(i as i64)).collect()
    }

    #[test]
    fn rolling_examples() {
        let r: Vec<f64> = (0..253).map(|i| ((i * 37 % 11) as f64 - 5.0) / 1000.0).collect();
        let rs = rolling_sharpe(&dates(253), &r, 252).unwrap();
        assert_eq!(rs.values.len(), 2);
        assert_eq!(rs.values[0], Some(sharpe(&r[..252], 0.0).unwrap()));
        assert_eq!(rs.values[1], Some(sharpe(&r[1..], 0.0).unwrap()));
        assert_eq!(rs.dates[0], dates(253)[251]);

        let full = rolling_sharpe(&dates(252), &r[..252], 252).unwrap();
        assert_eq!(full.values, vec![Some(sharpe(&r[..252], 0.0).unwrap())]);

        let mut flat = vec![0.001; 10];
        flat.extend_from_slice(&[0.01, -0.01, 0.02]);
        let rs = rolling_sharpe(&dates(13), &flat, 5).unwrap();
        assert_eq!(rs.values[0], None);
        assert!(rs.values.last().unwrap().is_some());
        assert!(rolling_sharpe(&dates(3), &[0.1, 0.2, 0.3], 5).is_err());
    }

    #[test]
    fn table_csv_layout() {
        let t = MetricTable::from_returns(&[0.01, -0.02, 0.03]).unwrap();
        let mut buf = Vec::new();
        write_metric_csv(&mut buf, &[("A".into(), t)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let labels: Vec<&str> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap())
            .collect();
        assert_eq!(labels, METRIC_LABELS);
        let json = serde_json::to_value(MetricTable::from_returns(&[0.01, -0.02]).unwrap()).unwrap();
        for l in METRIC_LABELS {
            assert!(json.get(l).is_some(), "{l}");
        }
    }
}
