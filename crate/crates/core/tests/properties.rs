mod common;

use approx::assert_relative_eq;
use chrono::{Duration, NaiveDate};
use proptest::prelude::*;

use common::{daily_sharpe, ymd};
use sharpefolio::autodiff::{Graph, ParameterSet, Tensor};
use sharpefolio::backtest::BacktestReport;
use sharpefolio::benchmarks::{mvo_schedule, mvo_weights, AllocationSeries, MvoConfig, WeightVector};
use sharpefolio::fixtures::business_days;
use sharpefolio::market_data::{
    align_and_fill, build_features, build_windows, simple_returns, yoy_percent_change, Column, FeatureSpec,
    PricePanel, ReturnPanel, Series,
};
use sharpefolio::metrics;
use sharpefolio::parallel::Execution;
use sharpefolio::stats::{mann_whitney_u, z_test_two_sample, Alternative};
use sharpefolio::training::{batch_sharpe, sharpe_loss, sharpe_loss_weight_grad};

fn returns_strategy(min: usize, max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.2f64..0.2, min..=max)
}

fn prices_from(rets: &[f64]) -> Vec<f64> {
    let mut p = 100.0;
    let mut out = vec![p];
    for r in rets {
        p *= 1.0 + r;
        out.push(p);
    }
    out
}

fn rows_strategy(days: usize, assets: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-0.05f64..0.05, assets), days)
}

fn softmax_rows(w: &[f64], cols: usize) -> Vec<f64> {
    w.chunks(cols)
        .flat_map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(move |v| v / s)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn align_is_idempotent(rets in returns_strategy(3, 40), drop in prop::collection::vec(any::<bool>(), 41)) {
        let all = business_days(ymd(2020, 1, 1), rets.len() + 1);
        let prices = prices_from(&rets);
        let (dates, values): (Vec<NaiveDate>, Vec<f64>) = all
            .iter()
            .zip(&prices)
            .enumerate()
            .filter(|(i, _)| *i == 0 || !drop[*i])
            .map(|(_, (d, p))| (*d, *p))
            .unzip();
        let sparse = PricePanel::new(dates, vec![Column::new("x", values)], vec![]).unwrap();
        let once = align_and_fill(&[sparse], &all).unwrap();
        let twice = align_and_fill(&[once.clone()], &all).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn returns_compound_to_price_ratio(rets in returns_strategy(1, 200)) {
        let prices = prices_from(&rets);
        let dates = business_days(ymd(2020, 1, 1), prices.len());
        let panel = PricePanel::new(dates, vec![Column::new("x", prices.clone())], vec![]).unwrap();
        let r = simple_returns(&panel).unwrap();
        let wealth: f64 = r.rows().iter().map(|row| 1.0 + row[0]).product();
        assert_relative_eq!(wealth, prices.last().unwrap() / prices[0], max_relative = 1e-12);
    }

    #[test]
    fn windows_target_the_next_row(rets in returns_strategy(12, 60), lookback in 1usize..10) {
        let prices = prices_from(&rets);
        let dates = business_days(ymd(2020, 1, 1), prices.len());
        let panel = PricePanel::new(dates, vec![Column::new("x", prices)], vec![]).unwrap();
        let r = simple_returns(&panel).unwrap();
        let feats = build_features(&panel, &r, &FeatureSpec::default()).unwrap();
        let ds = build_windows(&feats, &r, lookback).unwrap();
        prop_assert_eq!(ds.len(), r.len() - lookback);
        for k in 0..ds.len() {
            prop_assert_eq!(ds.target(k), r.rows()[k + lookback].as_slice());
            prop_assert!(ds.decision_date(k) < ds.target_date(k));
            prop_assert_eq!(ds.window(k).len(), lookback);
        }
    }

    #[test]
    fn yoy_ignores_scale(values in prop::collection::vec(1.0f64..100.0, 6..30), period in 1usize..5, c in 0.01f64..100.0) {
        let dates: Vec<NaiveDate> = (0..values.len()).map(|i| ymd(2000, 1, 1) + Duration::days(i as i64)).collect();
        let a = yoy_percent_change(&Series { dates: dates.clone(), values: values.clone() }, period).unwrap();
        let scaled = values.iter().map(|v| v * c).collect();
        let b = yoy_percent_change(&Series { dates, values: scaled }, period).unwrap();
        prop_assert_eq!(&a.dates, &b.dates);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_relative_eq!(*x, *y, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn sharpe_ignores_positive_scale(r in returns_strategy(2, 100), c in 0.01f64..10.0) {
        let scaled: Vec<f64> = r.iter().map(|v| v * c).collect();
        match (metrics::sharpe(&r, 0.0), metrics::sharpe(&scaled, 0.0)) {
            (Ok(a), Ok(b)) => assert_relative_eq!(a, b, epsilon = 1e-9, max_relative = 1e-9),
            (a, b) => prop_assert_eq!(a.is_ok(), b.is_ok()),
        }
        if let (Ok(a), Ok(b)) = (metrics::avg_profit_over_avg_loss(&r), metrics::avg_profit_over_avg_loss(&scaled)) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        prop_assert_eq!(metrics::pct_positive(&r).unwrap(), metrics::pct_positive(&scaled).unwrap());
    }

    #[test]
    fn drawdown_ignores_zero_prefix(r in returns_strategy(1, 100), zeros in 0usize..20) {
        let mut padded = vec![0.0; zeros];
        padded.extend(&r);
        prop_assert_eq!(metrics::max_drawdown(&r).unwrap(), metrics::max_drawdown(&padded).unwrap());
        let dd = metrics::max_drawdown(&r).unwrap();
        prop_assert!((0.0..=1.0).contains(&dd));
    }

    #[test]
    fn rolling_sharpe_matches_slices(r in returns_strategy(2, 80), window in 2usize..30) {
        prop_assume!(window <= r.len());
        let dates = business_days(ymd(2020, 1, 1), r.len());
        let s = metrics::rolling_sharpe(&dates, &r, window).unwrap();
        prop_assert_eq!(s.values.len(), r.len() + 1 - window);
        for (i, v) in s.values.iter().enumerate() {
            prop_assert_eq!(s.dates[i], dates[i + window - 1]);
            prop_assert_eq!(*v, metrics::sharpe(&r[i..i + window], 0.0).ok());
        }
    }

    #[test]
    fn mann_whitney_u_pairs_sum(a in prop::collection::vec(-5i32..5, 1..15), b in prop::collection::vec(-5i32..5, 1..15)) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let (Ok(ab), Ok(ba)) = (mann_whitney_u(&a, &b, Alternative::TwoSided), mann_whitney_u(&b, &a, Alternative::TwoSided)) else {
            // every value tied
            return Ok(());
        };
        assert_relative_eq!(ab.statistic + ba.statistic, (a.len() * b.len()) as f64, epsilon = 1e-9);
        assert_relative_eq!(ab.p_value, ba.p_value, epsilon = 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        let g = mann_whitney_u(&a, &b, Alternative::Greater).unwrap();
        let l = mann_whitney_u(&b, &a, Alternative::Less).unwrap();
        assert_relative_eq!(g.p_value, l.p_value, epsilon = 1e-12);
    }

    #[test]
    fn z_test_is_antisymmetric(a in prop::collection::vec(-3.0f64..3.0, 2..20), b in prop::collection::vec(-3.0f64..3.0, 2..20)) {
        let (Ok(ab), Ok(ba)) = (z_test_two_sample(&a, &b), z_test_two_sample(&b, &a)) else {
            return Ok(());
        };
        prop_assert_eq!(ab.statistic, -ba.statistic);
        prop_assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn mvo_respects_bounds_and_symmetries(rows in rows_strategy(30, 3), c in 0.1f64..10.0) {
        let cfg = MvoConfig::default();
        let w = mvo_weights(&rows, &cfg).unwrap().into_inner();
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        for v in &w {
            prop_assert!(*v >= 0.1 - 1e-9 && *v <= 0.9 + 1e-9);
        }
        let base = daily_sharpe(&rows, &w);

        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
        let ws = mvo_weights(&scaled, &cfg).unwrap().into_inner();
        assert_relative_eq!(daily_sharpe(&rows, &ws), base, epsilon = 1e-6);

        let perm = [2, 0, 1];
        let permuted: Vec<Vec<f64>> = rows.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
        let wp = mvo_weights(&permuted, &cfg).unwrap().into_inner();
        assert_relative_eq!(daily_sharpe(&permuted, &wp), base, epsilon = 1e-6);
    }

    #[test]
    fn mvo_schedule_holds_within_quarters(rows in rows_strategy(160, 3)) {
        let dates = business_days(ymd(2020, 1, 1), rows.len());
        let returns = ReturnPanel::from_rows(dates.clone(), vec!["a".into(), "b".into(), "c".into()], rows).unwrap();
        let cfg = MvoConfig { lookback_days: 40, restarts: 2, ..MvoConfig::default() };
        let test = dates[40..].to_vec();
        let alloc = mvo_schedule(&returns, &cfg, &test, Execution::Sequential).unwrap();
        prop_assert_eq!(&alloc.dates, &test);
        let quarter = |d: &NaiveDate| (chrono::Datelike::year(d), chrono::Datelike::month0(d) / 3);
        for i in 1..test.len() {
            if quarter(&test[i]) == quarter(&test[i - 1]) {
                prop_assert_eq!(&alloc.weights[i], &alloc.weights[i - 1]);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        logits in prop::collection::vec(-30.0f64..30.0, 12),
        shift in -100.0f64..100.0,
    ) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![3, 4], logits.clone()).unwrap()).unwrap();
        let shifted = g.constant(Tensor::from_vec(vec![3, 4], logits.iter().map(|v| v + shift).collect()).unwrap()).unwrap();
        let a = g.softmax(x).unwrap();
        let b = g.softmax(shifted).unwrap();
        let (a, b) = (g.value(a).data().to_vec(), g.value(b).data().to_vec());
        let reference = softmax_rows(&logits, 4);
        for i in 0..12 {
            assert_relative_eq!(a[i], b[i], epsilon = 1e-12);
            assert_relative_eq!(a[i], reference[i], epsilon = 1e-12);
        }
        for row in a.chunks(4) {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn backward_is_linear(
        x in prop::collection::vec(-2.0f64..2.0, 6),
        u in prop::collection::vec(-2.0f64..2.0, 6),
        v in prop::collection::vec(-2.0f64..2.0, 6),
        alpha in -3.0f64..3.0,
    ) {
        // gradient of sum(c * tanh(x)) is linear in c
        let grad = |c: &[f64]| {
            let mut params = ParameterSet::new();
            params.insert("x", Tensor::from_vec(vec![2, 3], x.clone()).unwrap());
            let mut g = Graph::new();
            let xv = g.param(&params, "x").unwrap();
            let cv = g.constant(Tensor::from_vec(vec![2, 3], c.to_vec()).unwrap()).unwrap();
            let t = g.tanh(xv).unwrap();
            let m = g.mul(t, cv).unwrap();
            let s = g.sum(m).unwrap();
            g.backward(s, &mut params).unwrap();
            params.grad("x").unwrap().data().to_vec()
        };
        let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + alpha * b).collect();
        let (gu, gv, gc) = (grad(&u), grad(&v), grad(&combo));
        for i in 0..6 {
            assert_relative_eq!(gc[i], gu[i] + alpha * gv[i], epsilon = 1e-12);
        }
        // forward and backward are deterministic
        prop_assert_eq!(grad(&u), gu);
    }

    #[test]
    fn loss_gradient_matches_finite_differences(
        logits in prop::collection::vec(-2.0f64..2.0, 15),
        rets in prop::collection::vec(-0.05f64..0.05, 15),
    ) {
        let w = Tensor::from_vec(vec![5, 3], softmax_rows(&logits, 3)).unwrap();
        let r = Tensor::from_vec(vec![5, 3], rets).unwrap();
        let (_, grad) = sharpe_loss_weight_grad(&w, &r).unwrap();
        let loss = |w: &Tensor| sharpe_loss_weight_grad(w, &r).unwrap().0;
        let h = 1e-6;
        for i in 0..15 {
            let mut p = w.clone();
            p.data_mut()[i] += h;
            let mut m = w.clone();
            m.data_mut()[i] -= h;
            let numeric = (loss(&p) - loss(&m)) / (2.0 * h);
            let a = grad.data()[i];
            prop_assert!(
                (a - numeric).abs() <= 1e-4 * a.abs().max(numeric.abs()) || (a - numeric).abs() < 1e-6,
                "entry {}: tape {} numeric {}", i, a, numeric
            );
        }
    }

    #[test]
    fn loss_is_negative_metric_sharpe(
        logits in prop::collection::vec(-2.0f64..2.0, 24),
        rets in prop::collection::vec(-0.05f64..0.05, 24),
    ) {
        let w = softmax_rows(&logits, 3);
        let port: Vec<f64> = w.chunks(3).zip(rets.chunks(3)).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect();
        let mut g = Graph::new();
        let wv = g.constant(Tensor::from_vec(vec![8, 3], w).unwrap()).unwrap();
        let rv = g.constant(Tensor::from_vec(vec![8, 3], rets).unwrap()).unwrap();
        let l = sharpe_loss(&mut g, wv, rv).unwrap();
        let loss = g.value(l).item().unwrap();
        let metric = metrics::sharpe(&port, 0.0).unwrap();
        // the loss denominator carries an extra 1e-8
        let sd = metric_sd(&port);
        prop_assume!(sd > 1e-4);
        assert_relative_eq!(-loss, metric, max_relative = 1e-8 / sd * 2.0 + 1e-12);
        assert_relative_eq!(batch_sharpe(&port), -loss, epsilon = 1e-12, max_relative = 1e-12);
    }

    #[test]
    fn turnover_stays_in_range(logits in prop::collection::vec(-5.0f64..5.0, 12..60), rate in 0.0f64..0.01) {
        let w = softmax_rows(&logits[..logits.len() / 4 * 4], 4);
        let n = w.len() / 4;
        prop_assume!(n >= 2);
        let dates = business_days(ymd(2020, 1, 1), n);
        let names: Vec<String> = ["a", "b", "c", "d"].map(String::from).to_vec();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![0.01 * (i % 3) as f64, -0.005, 0.002, 0.0]).collect();
        let returns = ReturnPanel::from_rows(dates.clone(), names.clone(), rows).unwrap();
        let weights = w.chunks(4).map(|c| WeightVector::new(c.to_vec()).unwrap()).collect();
        let alloc = AllocationSeries::new(dates, names, weights).unwrap();
        let report = BacktestReport::from_allocations("p", alloc, &returns, rate, 2).unwrap();
        prop_assert_eq!(report.turnover[0], 0.0);
        for (t, c) in report.turnover.iter().zip(&report.cost) {
            prop_assert!((0.0..=2.0 + 1e-12).contains(t));
            prop_assert_eq!(*c, rate * t);
        }
    }
}

fn metric_sd(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}
