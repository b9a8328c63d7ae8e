use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sharpefolio::backtest::{make_schedule, run_strategy, BacktestOptions, NeuralStrategy, Strategy};
use sharpefolio::benchmarks::{mvo_schedule, MvoConfig};
use sharpefolio::fixtures::fixture_market;
use sharpefolio::market_data::{simple_returns, FeatureSpec};
use sharpefolio::models::{LstmAllocatorConfig, ModelConfig};
use sharpefolio::parallel::Execution;
use sharpefolio::training::TrainConfig;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn ymd(y: i32, m: u32, d: u32) -> chrono::NaiveDate {
    chrono::NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn mvo(c: &mut Criterion) {
    let panel = fixture_market().unwrap();
    let returns = simple_returns(&panel).unwrap();
    let test: Vec<_> = returns.dates().iter().copied().filter(|d| *d >= ymd(2010, 1, 1)).collect();
    let cfg = MvoConfig {
        restarts: 20,
        ..MvoConfig::default()
    };
    let mut group = c.benchmark_group("mvo_schedule");
    group.sample_size(10);
    for (label, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(label), &exec, |b, &exec| {
            b.iter(|| mvo_schedule(black_box(&returns), &cfg, &test, exec).unwrap())
        });
    }
    group.finish();
}

fn neural_segments(c: &mut Criterion) {
    let panel = fixture_market().unwrap().select(
        &["EQ", "FI", "CMD", "VOL"].map(String::from),
        &[],
    ).unwrap();
    let schedule = make_schedule(ymd(2006, 1, 2), ymd(2008, 1, 1), ymd(2013, 12, 31), 2).unwrap();
    let strategy = Strategy::Neural(Box::new(NeuralStrategy {
        model: ModelConfig::Lstm(LstmAllocatorConfig {
            hidden_units: 8,
            lookback: 20,
            input_features: 8,
            n_assets: 4,
        }),
        train: TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
        features: FeatureSpec::default(),
        pretrain: None,
    }));
    let mut group = c.benchmark_group("lstm_walk_forward");
    group.sample_size(10);
    for (label, exec) in MODES {
        let options = BacktestOptions {
            exec,
            ..BacktestOptions::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(label), &options, |b, options| {
            b.iter(|| run_strategy("lstm", &strategy, black_box(&panel), &schedule, 3, options).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, mvo, neural_segments);
criterion_main!(benches);
