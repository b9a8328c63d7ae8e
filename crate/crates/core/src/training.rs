//! Sharpe-ratio loss, the mini-batch training loop and two-phase
//! pretrain/fine-tune.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdamConfig, AdamState, Graph, Mode, ParameterSet, Tensor, TensorError, Var};
use crate::market_data::{
    chronological_split, population_std, rolling_volatility, Column, DataError, PricePanel,
    Series, WindowedDataset, TRADING_DAYS,
};
use crate::models::{ModelConfig, ModelError};
use crate::rng::{self, site};

/// Added to the batch standard deviation in the loss denominator.
pub const SHARPE_EPS: f64 = 1e-8;

/// Samples per forward pass when evaluating a whole dataset.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("need at least {needed} training samples after the validation split, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    Diverged {
        epoch: usize,
        batch: usize,
        source: TensorError,
    },
    #[error("{what} mismatch: model expects {expected}, data has {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cannot write training log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub l2: f64,
    #[serde(default = "default_val")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Return the parameters of the epoch with the best validation Sharpe
    /// instead of the final epoch.
    #[serde(default)]
    pub best_epoch_selection: bool,
    /// Z-score features with statistics from the training rows only.
    #[serde(default)]
    pub zscore: bool,
}

fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    100
}
fn default_lr() -> f64 {
    1e-3
}
fn default_val() -> f64 {
    0.10
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
            l2: 0.0,
            validation_fraction: default_val(),
            seed: 0,
            best_epoch_selection: false,
            zscore: false,
        }
    }
}

impl TrainConfig {
    /// Transformer defaults: batch 128, 50 epochs, L2 1e-5.
    pub fn transformer() -> Self {
        Self {
            batch_size: 128,
            epochs: 50,
            l2: 1e-5,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(TrainError::Config(format!("l2 must be non-negative, got {}", self.l2)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(TrainError::Config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Per-epoch Sharpe ratios of one training run. `initial_*` hold the
/// evaluation before the first update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_train_sharpe: f64,
    pub initial_val_sharpe: f64,
    pub train_sharpe: Vec<f64>,
    pub val_sharpe: Vec<f64>,
    /// 1-based epoch with the highest validation Sharpe.
    pub best_epoch: usize,
}

impl TrainLog {
    /// `epoch,train_sharpe,val_sharpe`, with the pre-training evaluation as
    /// epoch 0.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_sharpe,val_sharpe")?;
        writeln!(out, "0,{:.10},{:.10}", self.initial_train_sharpe, self.initial_val_sharpe)?;
        for (i, (t, v)) in self.train_sharpe.iter().zip(&self.val_sharpe).enumerate() {
            writeln!(out, "{},{t:.10},{v:.10}", i + 1)?;
        }
        Ok(())
    }
}

/// `-(mean(R) / (std(R) + eps)) * sqrt(252)` with `R = sum_i w_i r_i` per
/// batch row. Both inputs are `batch x assets`.
pub fn sharpe_loss(g: &mut Graph, weights: Var, returns: Var) -> Result<Var, TensorError> {
    let (ws, rs) = (g.shape(weights).to_vec(), g.shape(returns).to_vec());
    if ws.len() != 2 || ws != rs {
        return Err(TensorError::Shape {
            op: "sharpe_loss",
            detail: format!("weights {ws:?} vs returns {rs:?}"),
        });
    }
    if ws[0] < 2 {
        return Err(TensorError::Shape {
            op: "sharpe_loss",
            detail: format!("batch of {} rows, need at least 2", ws[0]),
        });
    }
    let weighted = g.mul(weights, returns)?;
    let port = g.sum_last(weighted)?;
    let mean = g.mean(port)?;
    let sd = g.std_population(port)?;
    let denom = g.add_scalar(sd, SHARPE_EPS)?;
    let ratio = g.div(mean, denom)?;
    g.scale(ratio, -TRADING_DAYS.sqrt())
}

/// The value `-sharpe_loss` takes on a vector of portfolio returns.
pub fn batch_sharpe(portfolio: &[f64]) -> f64 {
    let mean = portfolio.iter().sum::<f64>() / portfolio.len() as f64;
    mean / (population_std(portfolio) + SHARPE_EPS) * TRADING_DAYS.sqrt()
}

/// Eval-mode weights for every sample of `dataset`, in order.
pub fn predict_weights(
    model: &ModelConfig,
    params: &ParameterSet,
    dataset: &WindowedDataset,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let mut out = Vec::with_capacity(dataset.len());
    // eval mode never draws from the stream
    let mut unused = rng::stream(0, site::DROPOUT);
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = dataset.batch(chunk);
        let mut g = Graph::new();
        let xv = g.constant(x)?;
        let w = model.forward(&mut g, params, xv, Mode::Eval, &mut unused)?;
        out.extend(g.value(w).data().chunks(model.n_assets()).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Sharpe of the eval-mode portfolio over a whole dataset, on the loss scale.
pub fn evaluate_sharpe(
    model: &ModelConfig,
    params: &ParameterSet,
    dataset: &WindowedDataset,
) -> Result<f64, TrainError> {
    if dataset.is_empty() {
        return Ok(f64::NAN);
    }
    let weights = predict_weights(model, params, dataset)?;
    let port: Vec<f64> = weights
        .iter()
        .enumerate()
        .map(|(k, w)| w.iter().zip(dataset.target(k)).map(|(a, b)| a * b).sum())
        .collect();
    Ok(batch_sharpe(&port))
}

fn check_dims(model: &ModelConfig, dataset: &WindowedDataset) -> Result<(), TrainError> {
    for (what, expected, got) in [
        ("lookback", model.lookback(), dataset.lookback()),
        ("feature count", model.input_features(), dataset.n_features()),
        ("asset count", model.n_assets(), dataset.n_assets()),
    ] {
        if expected != got {
            return Err(TrainError::Dimension { what, expected, got });
        }
    }
    Ok(())
}

/// Trains from a fresh initialization seeded by `config.seed`.
pub fn train(
    model: &ModelConfig,
    dataset: &WindowedDataset,
    config: &TrainConfig,
) -> Result<(ParameterSet, TrainLog), TrainError> {
    config.check()?;
    let params = model.init(config.seed)?;
    fit(model, params, dataset, config, false)
}

/// Continues training from `params` with a fresh optimizer state.
/// With `allow_no_batches`, a training split smaller than one batch leaves
/// the parameters untouched instead of failing.
pub fn fit(
    model: &ModelConfig,
    mut params: ParameterSet,
    dataset: &WindowedDataset,
    config: &TrainConfig,
    allow_no_batches: bool,
) -> Result<(ParameterSet, TrainLog), TrainError> {
    config.check()?;
    model.check()?;
    check_dims(model, dataset)?;
    let (train_set, val_set) = chronological_split(dataset, config.validation_fraction)?;
    let n_batches = train_set.len() / config.batch_size;
    if n_batches == 0 && !allow_no_batches {
        return Err(TrainError::TooFewSamples {
            needed: config.batch_size,
            got: train_set.len(),
        });
    }

    let mut adam = AdamState::new(AdamConfig {
        learning_rate: config.learning_rate,
        weight_decay: config.l2,
        ..AdamConfig::default()
    });
    let mut shuffle_rng = rng::stream(config.seed, site::SHUFFLE);
    let mut dropout_rng = rng::stream(config.seed, site::DROPOUT);

    let mut log = TrainLog {
        initial_train_sharpe: evaluate_sharpe(model, &params, &train_set)?,
        initial_val_sharpe: evaluate_sharpe(model, &params, &val_set)?,
        train_sharpe: Vec::with_capacity(config.epochs),
        val_sharpe: Vec::with_capacity(config.epochs),
        best_epoch: 1,
    };
    let mut best: Option<(f64, ParameterSet)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        if n_batches > 0 {
            order.shuffle(&mut shuffle_rng);
        }
        for (b, positions) in order.chunks_exact(config.batch_size).enumerate() {
            let diverged = |source| TrainError::Diverged {
                epoch,
                batch: b,
                source,
            };
            let (x, y) = train_set.batch(positions);
            let mut g = Graph::new();
            let xv = g.constant(x).map_err(diverged)?;
            let yv = g.constant(y).map_err(diverged)?;
            let w = match model.forward(&mut g, &params, xv, Mode::Train, &mut dropout_rng) {
                Ok(w) => w,
                Err(ModelError::Tensor(e)) => return Err(diverged(e)),
                Err(e) => return Err(e.into()),
            };
            let loss = sharpe_loss(&mut g, w, yv).map_err(diverged)?;
            g.backward(loss, &mut params).map_err(diverged)?;
            adam.step(&mut params).map_err(diverged)?;
        }
        let t = evaluate_sharpe(model, &params, &train_set)?;
        let v = evaluate_sharpe(model, &params, &val_set)?;
        log::debug!("epoch {epoch}: train sharpe {t:.4}, validation sharpe {v:.4}");
        log.train_sharpe.push(t);
        log.val_sharpe.push(v);
        if config.best_epoch_selection && best.as_ref().map_or(true, |(s, _)| v > *s) {
            best = Some((v, params.clone()));
        }
    }
    log.best_epoch = best_epoch(&log.val_sharpe);
    if let Some((_, p)) = best {
        params = p;
    }
    Ok((params, log))
}

fn best_epoch(val: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in val.iter().enumerate() {
        if *v > val[best] {
            best = i;
        }
    }
    best + 1
}

/// Phase 1 trains from scratch on `pretrain`; phase 2 continues from the
/// phase-1 parameters on `finetune` with a fresh Adam state. A fine-tune
/// split too small for one batch leaves the phase-1 parameters unchanged.
pub fn pretrain_finetune(
    model: &ModelConfig,
    pretrain: &WindowedDataset,
    finetune: &WindowedDataset,
    configs: (&TrainConfig, &TrainConfig),
) -> Result<(ParameterSet, (TrainLog, TrainLog)), TrainError> {
    check_dims(model, pretrain)?;
    check_dims(model, finetune)?;
    let (phase1, log1) = train(model, pretrain, configs.0)?;
    let (params, log2) = fit(model, phase1, finetune, configs.1, true)?;
    Ok((params, (log1, log2)))
}

/// Where one target-universe slot of the pretraining panel comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxySource {
    /// The proxy's price series as-is.
    Price(String),
    /// Annualized rolling volatility of the proxy's prices, times 100 (an
    /// index-level proxy for a volatility index).
    Volatility(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxySlot {
    pub asset: String,
    pub source: ProxySource,
}

/// Stock, bond, commodity and volatility-index slots filled from a broad
/// stock index, a bond index and gold.
pub fn standard_proxy_slots(
    universe: [&str; 4],
    stock: &str,
    bond: &str,
    gold: &str,
) -> Vec<ProxySlot> {
    let sources = [
        ProxySource::Price(stock.into()),
        ProxySource::Price(bond.into()),
        ProxySource::Price(gold.into()),
        ProxySource::Volatility(stock.into()),
    ];
    universe
        .iter()
        .zip(sources)
        .map(|(a, source)| ProxySlot {
            asset: a.to_string(),
            source,
        })
        .collect()
}

/// Builds a panel whose asset columns follow `slots` in order. Dates start
/// where the first volatility window is complete.
pub fn build_pretrain_panel(
    proxies: &PricePanel,
    slots: &[ProxySlot],
    vol_window: usize,
) -> Result<PricePanel, DataError> {
    let has_vol = slots
        .iter()
        .any(|s| matches!(s.source, ProxySource::Volatility(_)));
    let skip = if has_vol { vol_window } else { 0 };
    let mut columns = Vec::with_capacity(slots.len());
    for slot in slots {
        let values = match &slot.source {
            ProxySource::Price(name) => {
                let series = Series::from_column(proxies, name)?;
                series.values[skip.min(series.values.len())..].to_vec()
            }
            ProxySource::Volatility(name) => {
                let vol = rolling_volatility(&Series::from_column(proxies, name)?, vol_window)?;
                vol.values.iter().map(|v| v * 100.0).collect()
            }
        };
        columns.push(Column::new(slot.asset.clone(), values));
    }
    let dates = proxies.dates()[skip.min(proxies.len())..].to_vec();
    PricePanel::new(dates, columns, Vec::new())
}

/// Gradient of `sharpe_loss` with respect to a weight matrix, for checks.
pub fn sharpe_loss_weight_grad(weights: &Tensor, returns: &Tensor) -> Result<(f64, Tensor), TensorError> {
    let mut params = ParameterSet::new();
    params.insert("w", weights.clone());
    let mut g = Graph::new();
    let w = g.param(&params, "w")?;
    let r = g.constant(returns.clone())?;
    let loss = sharpe_loss(&mut g, w, r)?;
    g.backward(loss, &mut params)?;
    let value = g.value(loss).item().expect("scalar loss");
    Ok((value, params.grad("w").expect("registered").clone()))
}
