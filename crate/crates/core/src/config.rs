//! TOML run configuration: data sources, universe, strategy, schedule and
//! training settings, plus the pipeline that turns it into a price panel.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{
    make_schedule, NeuralStrategy, Pretrain, Reference, Strategy, WalkForwardSchedule,
    DEFAULT_COST_RATE, DEFAULT_ROLLING_WINDOW,
};
use crate::benchmarks::{MvoConfig, WeightVector};
use crate::market_data::{
    align_and_fill, load_csv, union_calendar, yoy_percent_change, Column, ColumnSpec, CsvSchema,
    DataError, FeatureSpec, PricePanel, Series,
};
use crate::models::{LstmAllocatorConfig, ModelConfig, TransformerAllocatorConfig};
use crate::stats::SampleSummary;
use crate::training::{build_pretrain_panel, ProxySlot, ProxySource, TrainConfig};

/// Experiment presets shipped as config files.
pub const PRESETS: [&str; 5] = ["verification", "time", "asset", "features", "transformer"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceColumn {
    /// Header in the file.
    pub source: String,
    /// Internal name; defaults to the header.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Exogenous indicator rather than a tradable price.
    #[serde(default)]
    pub feature: bool,
    /// Replace the series by its year-over-year percent change, with this
    /// many observations per year at the file's own frequency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yoy_period: Option<usize>,
}

impl SourceColumn {
    pub fn internal_name(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    #[serde(default = "default_date_column")]
    pub date_column: String,
    /// Whether the file's dates join the master trading calendar. Defaults to
    /// true when the file holds at least one asset column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calendar: Option<bool>,
    pub columns: Vec<SourceColumn>,
}

fn default_date_column() -> String {
    "date".into()
}

impl DataSource {
    fn schema(&self) -> CsvSchema {
        CsvSchema {
            date_column: self.date_column.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| ColumnSpec {
                    source: c.source.clone(),
                    name: c.internal_name().to_string(),
                    feature: c.feature,
                })
                .collect(),
        }
    }

    fn on_calendar(&self) -> bool {
        self.calendar
            .unwrap_or_else(|| self.columns.iter().any(|c| !c.feature))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Universe {
    pub assets: Vec<String>,
    #[serde(default)]
    pub features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub data_start: NaiveDate,
    pub first_test: NaiveDate,
    pub end: NaiveDate,
    #[serde(default = "two")]
    pub retrain_years: u32,
}

fn two() -> u32 {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Lstm,
    Transformer,
    Mvo,
    Balanced,
    Fixed,
}

impl StrategyKind {
    pub fn is_neural(self) -> bool {
        matches!(self, Self::Lstm | Self::Transformer)
    }

    fn label(self) -> &'static str {
        match self {
            Self::Lstm => "lstm",
            Self::Transformer => "transformer",
            Self::Mvo => "mvo",
            Self::Balanced => "balanced",
            Self::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub kind: StrategyKind,
    /// Fixed weights, in universe asset order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

/// Architecture overrides; unset fields take the architecture's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookback: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

/// Training overrides; unset fields take the architecture's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch_selection: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zscore: Option<bool>,
}

impl TrainSection {
    fn resolve(&self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            epochs: self.epochs.unwrap_or(base.epochs),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            l2: self.l2.unwrap_or(base.l2),
            validation_fraction: self.validation_fraction.unwrap_or(base.validation_fraction),
            seed: base.seed,
            best_epoch_selection: self.best_epoch_selection.unwrap_or(base.best_epoch_selection),
            zscore: self.zscore.unwrap_or(base.zscore),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotSection {
    pub asset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volatility: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub data: Vec<DataSource>,
    /// One slot per universe asset, in universe order.
    pub slots: Vec<SlotSection>,
    #[serde(default = "thirty")]
    pub vol_window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<NaiveDate>,
    /// Last pretraining date; defaults to the day before the first test date
    /// so no test-period data reaches the initial weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<NaiveDate>,
    #[serde(default)]
    pub train: TrainSection,
}

fn thirty() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicateSection {
    #[serde(default = "thirty")]
    pub runs: usize,
    /// Per-run Sharpe ratios of a reference study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_sample: Option<Vec<f64>>,
    /// Reported mean, sample standard deviation and run count of a reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_n: Option<usize>,
}

impl ReplicateSection {
    pub fn reference(&self) -> Option<Reference> {
        if let Some(s) = &self.reference_sample {
            return Some(Reference::Sample(s.clone()));
        }
        self.reference_mean.map(|mean| {
            Reference::Summary(SampleSummary {
                mean,
                std: self.reference_std.unwrap_or(0.0),
                n: self.reference_n.unwrap_or(self.runs),
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Report name; defaults to the strategy kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_cost")]
    pub cost_rate: f64,
    #[serde(default = "default_window")]
    pub rolling_window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub data: Vec<DataSource>,
    pub universe: Universe,
    pub schedule: ScheduleSection,
    pub strategy: StrategySection,
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub mvo: MvoConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicate: Option<ReplicateSection>,
}

fn default_cost() -> f64 {
    DEFAULT_COST_RATE
}

fn default_window() -> usize {
    DEFAULT_ROLLING_WINDOW
}

impl RunConfig {
    /// Parses a config file. Relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(source),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.data.iter_mut().for_each(|s| fix(&mut s.path));
        if let Some(pre) = &mut cfg.pretrain {
            pre.data.iter_mut().for_each(|s| fix(&mut s.path));
        }
        if let Some(out) = &mut cfg.output_dir {
            fix(out);
        }
        Ok(cfg)
    }

    pub fn name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.strategy.kind.label().to_string())
    }

    /// Every data file the run reads.
    pub fn data_files(&self) -> Vec<PathBuf> {
        let mut files: Vec<PathBuf> = self.data.iter().map(|s| s.path.clone()).collect();
        if let Some(p) = &self.pretrain {
            files.extend(p.data.iter().map(|s| s.path.clone()));
        }
        files
    }

    /// Number of input features per day implied by the feature switches.
    pub fn input_features(&self) -> usize {
        let a = self.universe.assets.len();
        let mut n = 0;
        if self.features.prices {
            n += a;
        }
        if self.features.returns {
            n += a;
        }
        if self.features.exogenous {
            n += self.universe.features.len();
        }
        n
    }

    pub fn model_config(&self) -> Option<ModelConfig> {
        let m = &self.model;
        let (f, a) = (self.input_features(), self.universe.assets.len());
        match self.strategy.kind {
            StrategyKind::Lstm => {
                let d = LstmAllocatorConfig {
                    hidden_units: 64,
                    lookback: 50,
                    input_features: f,
                    n_assets: a,
                };
                Some(ModelConfig::Lstm(LstmAllocatorConfig {
                    hidden_units: m.hidden_units.unwrap_or(d.hidden_units),
                    lookback: m.lookback.unwrap_or(d.lookback),
                    ..d
                }))
            }
            StrategyKind::Transformer => Some(ModelConfig::Transformer(TransformerAllocatorConfig {
                embedding_size: m.embedding_size.unwrap_or(32),
                n_heads: m.n_heads.unwrap_or(2),
                n_layers: m.n_layers.unwrap_or(1),
                dropout: m.dropout.unwrap_or(0.05),
                lookback: m.lookback.unwrap_or(504),
                l2: self.train_config().l2,
                input_features: f,
                n_assets: a,
            })),
            _ => None,
        }
    }

    fn train_defaults(&self) -> TrainConfig {
        match self.strategy.kind {
            StrategyKind::Transformer => TrainConfig::transformer(),
            _ => TrainConfig::default(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.resolve(self.train_defaults())
    }

    pub fn pretrain_train_config(&self) -> Option<TrainConfig> {
        self.pretrain
            .as_ref()
            .map(|p| p.train.resolve(self.train_config()))
    }

    pub fn walk_forward(&self) -> Result<WalkForwardSchedule, String> {
        let s = &self.schedule;
        make_schedule(s.data_start, s.first_test, s.end, s.retrain_years).map_err(|e| e.to_string())
    }

    /// All problems found, one message each. Empty means valid.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(p) = &self.preset {
            if !PRESETS.contains(&p.as_str()) {
                out.push(format!("unknown preset `{p}`; expected one of {PRESETS:?}"));
            }
        }
        let kind = self.strategy.kind;
        if kind.is_neural() && self.seed.is_none() {
            out.push(format!("seed is required for {} runs", kind.label()));
        }
        if !(self.cost_rate >= 0.0 && self.cost_rate.is_finite()) {
            out.push(format!("cost_rate must be non-negative, got {}", self.cost_rate));
        }
        if self.rolling_window < 2 {
            out.push(format!("rolling_window must be at least 2, got {}", self.rolling_window));
        }
        check_sources("data", &self.data, &mut out);

        let provided: HashSet<&str> = self
            .data
            .iter()
            .flat_map(|s| s.columns.iter().map(|c| c.internal_name()))
            .collect();
        if self.universe.assets.is_empty() {
            out.push("universe.assets is empty".into());
        }
        let mut seen = HashSet::new();
        for name in self.universe.assets.iter().chain(&self.universe.features) {
            if !provided.contains(name.as_str()) {
                out.push(format!("universe column `{name}` is not provided by any data source"));
            }
            if !seen.insert(name) {
                out.push(format!("universe column `{name}` is listed twice"));
            }
        }
        for name in &self.universe.assets {
            let yoy = self
                .data
                .iter()
                .flat_map(|s| &s.columns)
                .any(|c| c.internal_name() == name && c.yoy_period.is_some());
            if yoy {
                out.push(format!("asset `{name}` cannot take a year-over-year transform"));
            }
        }
        if let Err(e) = self.walk_forward() {
            out.push(e);
        }

        match kind {
            StrategyKind::Fixed => match &self.strategy.weights {
                None => out.push("strategy.weights is required for fixed strategies".into()),
                Some(w) if w.len() != self.universe.assets.len() => out.push(format!(
                    "strategy.weights has {} entries for {} assets",
                    w.len(),
                    self.universe.assets.len()
                )),
                Some(w) => {
                    if let Err(e) = WeightVector::new(w.clone()) {
                        out.push(format!("strategy.weights: {e}"));
                    }
                }
            },
            StrategyKind::Mvo => {
                if let Err(e) = self.mvo.check(self.universe.assets.len()) {
                    out.push(format!("mvo: {e}"));
                }
            }
            _ => {}
        }
        if kind.is_neural() {
            if self.input_features() == 0 {
                out.push("features: at least one of prices, returns, exogenous must be on".into());
            }
            if self.features.exogenous && self.universe.features.is_empty() {
                out.push("features.exogenous is on but universe.features is empty".into());
            }
            if let Some(m) = self.model_config() {
                if let Err(e) = m.check() {
                    out.push(format!("model: {e}"));
                }
            }
            check_train("train", &self.train_config(), &mut out);
        }
        if let Some(p) = &self.pretrain {
            if !kind.is_neural() {
                out.push("pretrain applies to neural strategies only".into());
            }
            check_sources("pretrain.data", &p.data, &mut out);
            let names: Vec<&str> = p.slots.iter().map(|s| s.asset.as_str()).collect();
            let universe: Vec<&str> = self.universe.assets.iter().map(String::as_str).collect();
            if names != universe {
                out.push(format!(
                    "pretrain.slots assets {names:?} must match universe.assets {universe:?} in order"
                ));
            }
            for s in &p.slots {
                if s.price.is_some() == s.volatility.is_some() {
                    out.push(format!(
                        "pretrain slot `{}` needs exactly one of price, volatility",
                        s.asset
                    ));
                }
            }
            if p.vol_window < 2 {
                out.push("pretrain.vol_window must be at least 2".into());
            }
            if let Some(c) = self.pretrain_train_config() {
                check_train("pretrain.train", &c, &mut out);
            }
        }
        if let Some(r) = &self.replicate {
            if r.runs < 2 {
                out.push(format!("replicate.runs must be at least 2, got {}", r.runs));
            }
            if !kind.is_neural() {
                out.push("replicate applies to neural strategies only".into());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.diagnostics();
        if d.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(d))
        }
    }

    /// Fully resolved settings as TOML, for echoing and manifests.
    pub fn effective_toml(&self) -> String {
        #[derive(Serialize)]
        struct Effective<'a> {
            config: &'a RunConfig,
            #[serde(skip_serializing_if = "Option::is_none")]
            resolved_model: Option<ModelConfig>,
            #[serde(skip_serializing_if = "Option::is_none")]
            resolved_train: Option<TrainConfig>,
            #[serde(skip_serializing_if = "Option::is_none")]
            resolved_pretrain_train: Option<TrainConfig>,
        }
        let neural = self.strategy.kind.is_neural();
        let e = Effective {
            config: self,
            resolved_model: self.model_config(),
            resolved_train: neural.then(|| self.train_config()),
            resolved_pretrain_train: self.pretrain_train_config(),
        };
        toml::to_string_pretty(&e).unwrap_or_else(|e| format!("# cannot render settings: {e}\n"))
    }

    /// Loads and aligns the configured data into the universe panel,
    /// restricted to the schedule's date range.
    pub fn load_panel(&self) -> Result<PricePanel, DataError> {
        let panel = assemble(&self.data)?;
        let panel = panel.select(&self.universe.assets, &self.universe.features)?;
        panel.between(self.schedule.data_start, self.schedule.end)
    }

    /// The strategy to run, loading pretraining data if configured.
    pub fn build_strategy(&self) -> Result<Strategy, DataError> {
        Ok(match self.strategy.kind {
            StrategyKind::Balanced => Strategy::Balanced,
            StrategyKind::Fixed => Strategy::Fixed(self.strategy.weights.clone().unwrap_or_default()),
            StrategyKind::Mvo => Strategy::Mvo(self.mvo.clone()),
            StrategyKind::Lstm | StrategyKind::Transformer => {
                let model = self.model_config().expect("neural kind has a model");
                let pretrain = match &self.pretrain {
                    Some(p) => Some(Pretrain {
                        panel: self.load_pretrain_panel(p)?,
                        train: self.pretrain_train_config().expect("pretrain section present"),
                    }),
                    None => None,
                };
                Strategy::Neural(Box::new(NeuralStrategy {
                    model,
                    train: self.train_config(),
                    features: self.features.clone(),
                    pretrain,
                }))
            }
        })
    }

    fn load_pretrain_panel(&self, p: &PretrainSection) -> Result<PricePanel, DataError> {
        let proxies = assemble(&p.data)?;
        let end = p
            .end
            .unwrap_or(self.schedule.first_test - chrono::Duration::days(1));
        let start = p.start.unwrap_or(NaiveDate::MIN);
        let proxies = proxies.between(start, end)?;
        let slots: Vec<ProxySlot> = p
            .slots
            .iter()
            .map(|s| ProxySlot {
                asset: s.asset.clone(),
                source: match (&s.price, &s.volatility) {
                    (Some(name), _) => ProxySource::Price(name.clone()),
                    (None, Some(name)) => ProxySource::Volatility(name.clone()),
                    (None, None) => ProxySource::Price(s.asset.clone()),
                },
            })
            .collect();
        let priced = build_pretrain_panel(&proxies, &slots, p.vol_window)?;
        // exogenous features are taken under the same names from the proxy files
        let skip = proxies.len() - priced.len();
        let features = self
            .universe
            .features
            .iter()
            .map(|name| {
                let col = proxies
                    .column(name)
                    .ok_or_else(|| DataError::UnknownColumn(name.clone()))?;
                Ok(Column::new(name.clone(), col.values[skip..].to_vec()))
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        let features = if self.features.exogenous { features } else { Vec::new() };
        PricePanel::new(priced.dates().to_vec(), priced.assets().to_vec(), features)
    }
}

fn check_sources(section: &str, sources: &[DataSource], out: &mut Vec<String>) {
    if sources.is_empty() {
        out.push(format!("{section}: no data sources"));
    }
    let mut names = HashSet::new();
    for s in sources {
        if !s.path.is_file() {
            out.push(format!("{section}: data file {} does not exist", s.path.display()));
        }
        if s.columns.is_empty() {
            out.push(format!("{section}: {} declares no columns", s.path.display()));
        }
        for c in &s.columns {
            if !names.insert(c.internal_name().to_string()) {
                out.push(format!(
                    "{section}: column name `{}` is declared more than once",
                    c.internal_name()
                ));
            }
            if c.yoy_period == Some(0) {
                out.push(format!("{section}: yoy_period for `{}` must be positive", c.source));
            }
        }
    }
    if !sources.is_empty() && !sources.iter().any(DataSource::on_calendar) {
        out.push(format!("{section}: no source contributes trading days to the calendar"));
    }
}

fn check_train(section: &str, c: &TrainConfig, out: &mut Vec<String>) {
    if c.batch_size < 2 {
        out.push(format!(
            "{section}.batch_size must be at least 2 (the Sharpe loss needs a batch standard deviation), got {}",
            c.batch_size
        ));
    }
    if c.epochs == 0 {
        out.push(format!("{section}.epochs must be at least 1"));
    }
    if !(c.learning_rate > 0.0 && c.learning_rate.is_finite()) {
        out.push(format!("{section}.learning_rate must be positive, got {}", c.learning_rate));
    }
    if !(c.l2 >= 0.0 && c.l2.is_finite()) {
        out.push(format!("{section}.l2 must be non-negative, got {}", c.l2));
    }
    if !(c.validation_fraction > 0.0 && c.validation_fraction < 1.0) {
        out.push(format!(
            "{section}.validation_fraction must lie in (0, 1), got {}",
            c.validation_fraction
        ));
    }
}

/// Loads every source, applies year-over-year transforms at each file's own
/// frequency, and aligns all columns onto the union of the calendar sources'
/// dates.
pub fn assemble(sources: &[DataSource]) -> Result<PricePanel, DataError> {
    let mut calendar_panels = Vec::new();
    let mut columns = Vec::new();
    for s in sources {
        let panel = load_csv(&s.path, &s.schema())?;
        for c in &s.columns {
            let name = c.internal_name();
            let series = Series::from_column(&panel, name)?;
            let series = match c.yoy_period {
                Some(p) => yoy_percent_change(&series, p)?,
                None => series,
            };
            let col = Column::new(name, series.values);
            let (assets, features) = if c.feature {
                (vec![], vec![col])
            } else {
                (vec![col], vec![])
            };
            columns.push(PricePanel::new(series.dates, assets, features)?);
        }
        if s.on_calendar() {
            calendar_panels.push(panel);
        }
    }
    let calendar = union_calendar(&calendar_panels);
    align_and_fill(&columns, &calendar)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 1
[[data]]
path = "prices.csv"
columns = [{ source = "A" }, { source = "B" }]
[universe]
assets = ["A", "B"]
[schedule]
data_start = "2020-01-01"
first_test = "2020-01-03"
end = "2020-01-10"
[strategy]
kind = "lstm"
"#;

    fn parse(extra: &str) -> RunConfig {
        toml::from_str(&format!("{BASE}{extra}")).unwrap()
    }

    #[test]
    fn defaults_resolve_per_architecture() {
        let c = parse("");
        let t = c.train_config();
        assert_eq!((t.batch_size, t.epochs, t.l2), (64, 100, 0.0));
        match c.model_config().unwrap() {
            ModelConfig::Lstm(m) => {
                assert_eq!((m.hidden_units, m.lookback, m.input_features, m.n_assets), (64, 50, 4, 2))
            }
            _ => panic!("expected lstm"),
        }
        let mut c = c;
        c.strategy.kind = StrategyKind::Transformer;
        let t = c.train_config();
        assert_eq!((t.batch_size, t.epochs, t.l2), (128, 50, 1e-5));
    }

    #[test]
    fn diagnostics_name_each_problem() {
        let mut c = parse("[train]\nbatch_size = 1\n");
        c.seed = None;
        let d = c.diagnostics();
        assert!(d.iter().any(|m| m.contains("prices.csv")));
        assert!(d.iter().any(|m| m.contains("seed is required")));
        assert!(d.iter().any(|m| m.contains("batch_size") && m.contains("Sharpe loss")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>(&format!("{BASE}[train]\nbatchsize = 3\n")).is_err());
    }

    #[test]
    fn effective_settings_render() {
        let text = parse("").effective_toml();
        assert!(text.contains("resolved_model"));
        assert!(text.contains("hidden_units = 64"));
    }
}
