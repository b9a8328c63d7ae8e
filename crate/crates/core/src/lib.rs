//! Sharpe-loss neural portfolio allocation with walk-forward backtesting.

pub mod autodiff;
pub mod benchmarks;
pub mod market_data;
pub mod metrics;
pub mod parallel;
pub mod rng;
pub mod stats;
pub mod models;
pub mod training;
pub mod backtest;
pub mod cli;
pub mod config;
pub mod fixtures;
