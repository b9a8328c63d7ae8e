//! Strategy comparison tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::metrics::RollingSharpeSeries;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatError {
    #[error("sample {0} is empty")]
    EmptySample(&'static str),
    #[error("need at least 2 entries per sample, got {0}")]
    TooFew(usize),
    #[error("all values are tied; the statistic has zero variance")]
    AllTied,
    #[error("both samples have zero variance")]
    ZeroVariance,
    #[error("series are not on the same dates")]
    DateMismatch,
    #[error("non-finite value in sample")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MannWhitneyU,
    ZTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// Sample a tends to be larger than sample b.
    Greater,
    Less,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub alternative: Alternative,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Midranks (1-based) of `values`, with the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Mann-Whitney U for `sample_a` (rank sum of a minus `n1(n1+1)/2`) with a
/// normal-approximation p-value: midranks for ties, tie-corrected variance
/// and a 0.5 continuity correction.
pub fn mann_whitney_u(
    sample_a: &[f64],
    sample_b: &[f64],
    alternative: Alternative,
) -> Result<TestResult, StatError> {
    if sample_a.is_empty() {
        return Err(StatError::EmptySample("a"));
    }
    if sample_b.is_empty() {
        return Err(StatError::EmptySample("b"));
    }
    if sample_a.iter().chain(sample_b).any(|v| !v.is_finite()) {
        return Err(StatError::NonFinite);
    }
    let (n1, n2) = (sample_a.len(), sample_b.len());
    let pooled: Vec<f64> = sample_a.iter().chain(sample_b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..n1].iter().sum();
    let u = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;

    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let n = n1f + n2f;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    let variance = n1f * n2f / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if variance <= 0.0 {
        return Err(StatError::AllTied);
    }
    let sd = variance.sqrt();
    let mu = n1f * n2f / 2.0;
    let norm = std_normal();
    let p = match alternative {
        Alternative::TwoSided => {
            let z = ((u - mu).abs() - 0.5) / sd;
            2.0 * norm.sf(z)
        }
        Alternative::Greater => norm.sf((u - mu - 0.5) / sd),
        Alternative::Less => norm.cdf((u - mu + 0.5) / sd),
    };
    Ok(TestResult {
        method: Method::MannWhitneyU,
        statistic: u,
        p_value: p.clamp(0.0, 1.0),
        n1,
        n2,
        alternative,
    })
}

fn mean_and_sample_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

fn z_result(z: f64, n1: usize, n2: usize) -> TestResult {
    TestResult {
        method: Method::ZTest,
        statistic: z,
        p_value: (2.0 * std_normal().sf(z.abs())).clamp(0.0, 1.0),
        n1,
        n2,
        alternative: Alternative::TwoSided,
    }
}

/// Two-tailed z-test on the difference of means with unequal sample
/// (1/(n-1)) variances.
pub fn z_test_two_sample(means_a: &[f64], means_b: &[f64]) -> Result<TestResult, StatError> {
    for s in [means_a, means_b] {
        if s.len() < 2 {
            return Err(StatError::TooFew(s.len()));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(StatError::NonFinite);
        }
    }
    let (ma, va) = mean_and_sample_var(means_a);
    let (mb, vb) = mean_and_sample_var(means_b);
    let se2 = va / means_a.len() as f64 + vb / means_b.len() as f64;
    if se2 == 0.0 {
        if ma == mb {
            return Ok(z_result(0.0, means_a.len(), means_b.len()));
        }
        return Err(StatError::ZeroVariance);
    }
    Ok(z_result((ma - mb) / se2.sqrt(), means_a.len(), means_b.len()))
}

/// Reference sample known only through its summary statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// [`z_test_two_sample`] against a reported mean, sample std and size.
pub fn z_test_against_summary(
    sample: &[f64],
    reference: SampleSummary,
) -> Result<TestResult, StatError> {
    if sample.len() < 2 {
        return Err(StatError::TooFew(sample.len()));
    }
    if reference.n < 1 {
        return Err(StatError::TooFew(reference.n));
    }
    let (m, v) = mean_and_sample_var(sample);
    let se2 = v / sample.len() as f64 + reference.std.powi(2) / reference.n as f64;
    if se2 == 0.0 {
        if m == reference.mean {
            return Ok(z_result(0.0, sample.len(), reference.n));
        }
        return Err(StatError::ZeroVariance);
    }
    Ok(z_result((m - reference.mean) / se2.sqrt(), sample.len(), reference.n))
}

/// Fraction of shared dates on which `a` is strictly above `b`. Dates where
/// either value is undefined are dropped first.
pub fn outperformance_fraction(
    a: &RollingSharpeSeries,
    b: &RollingSharpeSeries,
) -> Result<f64, StatError> {
    if a.dates != b.dates {
        return Err(StatError::DateMismatch);
    }
    let pairs: Vec<(f64, f64)> = a
        .values
        .iter()
        .zip(&b.values)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .collect();
    if pairs.is_empty() {
        return Err(StatError::EmptySample("paired"));
    }
    Ok(pairs.iter().filter(|(x, y)| x > y).count() as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    #[test]
    fn identical_samples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], Alternative::TwoSided).unwrap();
        assert_eq!(r.statistic, 4.5);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separated_samples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0], Alternative::TwoSided)
            .unwrap();
        assert_eq!(r.statistic, 0.0);
        // exact permutation p is 2/20
        assert!((r.p_value - 0.1).abs() < 0.07, "{}", r.p_value);
        let g = mann_whitney_u(&[10.0, 11.0, 12.0], &[1.0, 2.0, 3.0], Alternative::Greater)
            .unwrap();
        assert!(g.p_value < 0.05);
        let l = mann_whitney_u(&[10.0, 11.0, 12.0], &[1.0, 2.0, 3.0], Alternative::Less).unwrap();
        assert!(l.p_value > 0.95);
    }

    #[test]
    fn ties_use_midranks() {
        let (ranks, ties) = midranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(ranks, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(ties, vec![2]);
        let ab = mann_whitney_u(&[1.0, 2.0, 2.0], &[2.0, 3.0], Alternative::TwoSided).unwrap();
        let ba = mann_whitney_u(&[2.0, 3.0], &[1.0, 2.0, 2.0], Alternative::TwoSided).unwrap();
        assert!((ab.statistic + ba.statistic - 6.0).abs() < 1e-12);
    }

    #[test]
    fn mw_errors() {
        assert!(mann_whitney_u(&[], &[1.0], Alternative::TwoSided).is_err());
        assert_eq!(
            mann_whitney_u(&[1.0, 1.0], &[1.0], Alternative::TwoSided),
            Err(StatError::AllTied)
        );
    }

    #[test]
    fn z_examples() {
        let r = z_test_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);

        // n = 25 each, sample variance exactly 1: values mean±1 alternating
        // with 25 values cannot give s^2 = 1 exactly, so scale a symmetric set
        let base: Vec<f64> = (0..25).map(|i| i as f64 - 12.0).collect();
        let (_, v) = mean_and_sample_var(&base);
        let a: Vec<f64> = base.iter().map(|x| 1.0 + x / v.sqrt()).collect();
        let b: Vec<f64> = base.iter().map(|x| x / v.sqrt()).collect();
        let r = z_test_two_sample(&a, &b).unwrap();
        assert!((r.statistic - 1.0 / (2.0f64 / 25.0).sqrt()).abs() < 1e-10);
        assert!((r.statistic - 3.536).abs() < 1e-3);

        assert!(z_test_two_sample(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(
            z_test_two_sample(&[1.0, 1.0], &[2.0, 2.0]),
            Err(StatError::ZeroVariance)
        );
        let s = z_test_two_sample(&b, &a).unwrap();
        assert_eq!(s.statistic, -r.statistic);
        assert_eq!(s.p_value, r.p_value);
    }

    #[test]
    fn z_against_summary_matches_sample_form() {
        let a = [1.9, 1.7, 1.8, 2.0, 1.6];
        let b = [1.8, 1.9, 1.85, 1.75];
        let (mb, vb) = mean_and_sample_var(&b);
        let s = z_test_against_summary(
            &a,
            SampleSummary {
                mean: mb,
                std: vb.sqrt(),
                n: b.len(),
            },
        )
        .unwrap();
        let d = z_test_two_sample(&a, &b).unwrap();
        assert!((s.statistic - d.statistic).abs() < 1e-12);
    }

    fn series(vals: &[Option<f64>]) -> RollingSharpeSeries {
        let s = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        RollingSharpeSeries {
            dates: (0..vals.len()).map(|i| s + chrono::Duration::days(i as i64)).collect(),
            values: vals.to_vec(),
            window: 2,
        }
    }

    #[test]
    fn outperformance_examples() {
        let a = series(&(0..25).map(|i| Some(i as f64)).collect::<Vec<_>>());
        assert_eq!(outperformance_fraction(&a, &a).unwrap(), 0.0);
        let b = series(&(0..25).map(|i| Some(i as f64 - 1.0)).collect::<Vec<_>>());
        assert_eq!(outperformance_fraction(&a, &b).unwrap(), 1.0);
        let c = series(
            &(0..25)
                .map(|i| Some(if i < 18 { i as f64 - 1.0 } else { i as f64 + 1.0 }))
                .collect::<Vec<_>>(),
        );
        assert_eq!(outperformance_fraction(&a, &c).unwrap(), 0.72);
        let short = series(&[Some(1.0)]);
        assert_eq!(outperformance_fraction(&a, &short), Err(StatError::DateMismatch));
        let gap = series(&[None, Some(2.0), Some(0.0)]);
        let other = series(&[Some(5.0), Some(1.0), Some(1.0)]);
        assert_eq!(outperformance_fraction(&gap, &other).unwrap(), 0.5);
    }

    #[test]
    fn test_result_json_shape() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0], Alternative::TwoSided).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["method"], "mann_whitney_u");
        assert_eq!(v["alternative"], "two_sided");
        for k in ["statistic", "p_value", "n1", "n2"] {
            assert!(v.get(k).is_some());
        }
    }
}
