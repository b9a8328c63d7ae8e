//! Deterministic synthetic data and the bundled example configs, so every
//! workflow runs without downloading market data.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use rand_distr::{Distribution, Normal};

use crate::market_data::{Column, DataError, PricePanel};
use crate::rng::{self, site};

/// One simulated asset: i.i.d. normal daily simple returns.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetSpec {
    pub name: String,
    pub daily_mean: f64,
    pub daily_vol: f64,
    pub start_price: f64,
}

impl AssetSpec {
    pub fn new(name: &str, daily_mean: f64, daily_vol: f64) -> Self {
        Self {
            name: name.to_string(),
            daily_mean,
            daily_vol,
            start_price: 100.0,
        }
    }
}

/// A positive mean-reverting level, e.g. a volatility index or a rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSpec {
    pub name: String,
    pub mean: f64,
    /// Daily mean-reversion speed of the log level.
    pub reversion: f64,
    /// Daily standard deviation of log-level shocks.
    pub vol: f64,
}

impl LevelSpec {
    pub fn new(name: &str, mean: f64, reversion: f64, vol: f64) -> Self {
        Self {
            name: name.to_string(),
            mean,
            reversion,
            vol,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub start: NaiveDate,
    pub n_days: usize,
    pub assets: Vec<AssetSpec>,
    /// Mean-reverting series traded as assets (after the random-walk ones).
    pub level_assets: Vec<LevelSpec>,
    pub features: Vec<LevelSpec>,
    pub seed: u64,
}

/// `n` consecutive weekdays starting at the first weekday on or after `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

/// Weekdays from `start` through `end` inclusive.
pub fn business_days_between(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

fn random_walk(spec: &AssetSpec, n: usize, r: &mut rng::StreamRng) -> Vec<f64> {
    let dist = Normal::new(spec.daily_mean, spec.daily_vol).expect("finite volatility");
    let mut p = spec.start_price;
    (0..n)
        .map(|i| {
            if i > 0 {
                // clamp keeps prices positive under extreme draws
                p *= (1.0 + dist.sample(r)).max(0.01);
            }
            p
        })
        .collect()
}

fn level_path(spec: &LevelSpec, n: usize, r: &mut rng::StreamRng) -> Vec<f64> {
    let shock = Normal::new(0.0, spec.vol).expect("finite volatility");
    let target = spec.mean.ln();
    let mut x = target;
    (0..n)
        .map(|i| {
            if i > 0 {
                x += spec.reversion * (target - x) + shock.sample(r);
            }
            x.exp()
        })
        .collect()
}

/// Generates the panel described by `spec`. Identical specs give identical
/// panels.
pub fn synthetic_panel(spec: &SyntheticSpec) -> Result<PricePanel, DataError> {
    let mut r = rng::stream(spec.seed, site::SYNTHETIC);
    let dates = business_days(spec.start, spec.n_days);
    let mut assets: Vec<Column> = spec
        .assets
        .iter()
        .map(|a| Column::new(a.name.clone(), random_walk(a, spec.n_days, &mut r)))
        .collect();
    assets.extend(
        spec.level_assets
            .iter()
            .map(|l| Column::new(l.name.clone(), level_path(l, spec.n_days, &mut r))),
    );
    let features = spec
        .features
        .iter()
        .map(|l| Column::new(l.name.clone(), level_path(l, spec.n_days, &mut r)))
        .collect();
    PricePanel::new(dates, assets, features)
}

/// Asset `a1` has daily mean 0.002 and volatility 0.005 (daily Sharpe 0.4);
/// the other assets have zero mean and volatility 0.02.
pub fn dominant_asset_panel(n_days: usize, n_assets: usize, seed: u64) -> Result<PricePanel, DataError> {
    let assets = (0..n_assets)
        .map(|j| {
            let (mean, vol) = if j == 0 { (0.002, 0.005) } else { (0.0, 0.02) };
            AssetSpec::new(&format!("a{}", j + 1), mean, vol)
        })
        .collect();
    synthetic_panel(&SyntheticSpec {
        start: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
        n_days,
        assets,
        level_assets: vec![],
        features: vec![],
        seed,
    })
}

/// Writes a panel as `date,<assets...>,<features...>`.
pub fn write_panel_csv(panel: &PricePanel, path: &Path) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let cols: Vec<&Column> = panel.assets().iter().chain(panel.features()).collect();
    let mut header = vec!["date".to_string()];
    header.extend(cols.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for (i, d) in panel.dates().iter().enumerate() {
        let mut row = vec![d.to_string()];
        row.extend(cols.iter().map(|c| format!("{:.6}", c.values[i])));
        w.write_record(&row)?;
    }
    w.flush()
}

/// Five trading days of two assets.
pub const FIVE_DAY_CSV: &str = "\
date,STOCK,BOND
2020-01-06,100.0,50.0
2020-01-07,102.0,50.5
2020-01-08,101.0,50.0
2020-01-09,103.0,49.5
2020-01-10,103.5,50.5
";

pub const FIXTURE_START: (i32, u32, u32) = (2004, 1, 1);
pub const FIXTURE_END: (i32, u32, u32) = (2013, 12, 31);

fn ymd((y, m, d): (i32, u32, u32)) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

/// Main fixture market: three random-walk assets, a volatility-index level
/// traded as the fourth asset, and a daily rate feature.
pub fn fixture_market() -> Result<PricePanel, DataError> {
    let dates = business_days_between(ymd((2006, 1, 2)), ymd(FIXTURE_END));
    synthetic_panel(&SyntheticSpec {
        start: dates[0],
        n_days: dates.len(),
        assets: vec![
            AssetSpec::new("EQ", 0.0004, 0.012),
            AssetSpec::new("FI", 0.0001, 0.003),
            AssetSpec::new("CMD", 0.0001, 0.014),
        ],
        level_assets: vec![LevelSpec::new("VOL", 18.0, 0.03, 0.06)],
        features: vec![LevelSpec::new("RATE", 2.0, 0.002, 0.01)],
        seed: 11,
    })
}

/// Longer history of proxy series for pretraining.
pub fn fixture_proxies() -> Result<PricePanel, DataError> {
    let dates = business_days_between(ymd(FIXTURE_START), ymd(FIXTURE_END));
    synthetic_panel(&SyntheticSpec {
        start: dates[0],
        n_days: dates.len(),
        assets: vec![
            AssetSpec::new("EQP", 0.0004, 0.011),
            AssetSpec::new("FIP", 0.0001, 0.003),
            AssetSpec::new("GLD", 0.0002, 0.010),
        ],
        level_assets: vec![],
        features: vec![],
        seed: 12,
    })
}

/// Month-start observations of a price index, for year-over-year features.
pub fn fixture_monthly_index() -> Vec<(NaiveDate, f64)> {
    let mut r = rng::stream(13, site::SYNTHETIC);
    let shock = Normal::new(0.002, 0.002).expect("finite volatility");
    let mut level = 200.0;
    let mut out = Vec::new();
    for y in 2005..=2013 {
        for m in 1..=12 {
            out.push((ymd((y, m, 1)), level));
            level *= 1.0 + shock.sample(&mut r);
        }
    }
    out
}

const BALANCED_FIVE_DAY: &str = r#"preset = "verification"
name = "balanced"
rolling_window = 2

[[data]]
path = "data/five_day.csv"
columns = [{ source = "STOCK" }, { source = "BOND" }]

[universe]
assets = ["STOCK", "BOND"]

[schedule]
data_start = "2020-01-06"
first_test = "2020-01-07"
end = "2020-01-10"

[strategy]
kind = "balanced"
"#;

const MARKET_HEADER: &str = r#"
[[data]]
path = "data/market.csv"
columns = [
  { source = "EQ" },
  { source = "FI" },
  { source = "CMD" },
  { source = "VOL" },
  { source = "RATE", feature = true },
]

[[data]]
path = "data/monthly.csv"
columns = [{ source = "CPI", feature = true, yoy_period = 12 }]

[schedule]
data_start = "2006-01-02"
first_test = "2010-01-01"
end = "2013-12-31"
"#;

fn market_config(head: &str, tail: &str) -> String {
    format!("{head}\n{MARKET_HEADER}\n{tail}")
}

/// The example configs written by [`write_bundle`], as (file name, text).
pub fn bundle_configs() -> Vec<(&'static str, String)> {
    let universe = "[universe]\nassets = [\"EQ\", \"FI\", \"CMD\", \"VOL\"]\n";
    vec![
        ("balanced_five_day.toml", BALANCED_FIVE_DAY.to_string()),
        (
            "balanced.toml",
            market_config(
                "preset = \"verification\"\nname = \"balanced\"",
                &format!("{universe}\n[strategy]\nkind = \"balanced\"\n"),
            ),
        ),
        (
            "mvo.toml",
            market_config(
                "preset = \"verification\"\nname = \"mvo\"",
                &format!("{universe}\n[strategy]\nkind = \"mvo\"\n\n[mvo]\nrestarts = 10\n"),
            ),
        ),
        (
            "lstm.toml",
            market_config(
                "preset = \"features\"\nname = \"lstm\"\nseed = 7",
                &format!(
                    "[universe]\nassets = [\"EQ\", \"FI\", \"CMD\", \"VOL\"]\nfeatures = [\"RATE\", \"CPI\"]\n\n\
                     [features]\nexogenous = true\n\n\
                     [strategy]\nkind = \"lstm\"\n\n\
                     [model]\nhidden_units = 8\nlookback = 20\n\n\
                     [train]\nepochs = 3\nzscore = true\n"
                ),
            ),
        ),
        (
            "transformer.toml",
            market_config(
                "preset = \"transformer\"\nname = \"transformer\"\nseed = 7",
                &format!(
                    "{universe}\n[strategy]\nkind = \"transformer\"\n\n\
                     [model]\nembedding_size = 8\nn_heads = 2\nlookback = 10\n\n\
                     [train]\nepochs = 2\n\n\
                     [pretrain]\nvol_window = 30\n\
                     data = [{{ path = \"data/proxies.csv\", columns = [{{ source = \"EQP\" }}, {{ source = \"FIP\" }}, {{ source = \"GLD\" }}] }}]\n\
                     slots = [\n  {{ asset = \"EQ\", price = \"EQP\" }},\n  {{ asset = \"FI\", price = \"FIP\" }},\n  \
                     {{ asset = \"CMD\", price = \"GLD\" }},\n  {{ asset = \"VOL\", volatility = \"EQP\" }},\n]\n\n\
                     [pretrain.train]\nepochs = 2\n"
                ),
            ),
        ),
    ]
}

fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    fs::File::create(path)?.write_all(text.as_bytes())
}

/// Writes the fixture data under `dir/data` and the example configs under
/// `dir`, returning every path written.
pub fn write_bundle(dir: &Path) -> Result<Vec<PathBuf>, FixtureError> {
    let data = dir.join("data");
    fs::create_dir_all(&data).map_err(|e| FixtureError::Io(data.clone(), e))?;
    let mut written = Vec::new();
    let mut text = |path: PathBuf, body: &str| -> Result<(), FixtureError> {
        write_text(&path, body).map_err(|e| FixtureError::Io(path.clone(), e))?;
        written.push(path);
        Ok(())
    };
    text(data.join("five_day.csv"), FIVE_DAY_CSV)?;
    let mut monthly = String::from("date,CPI\n");
    for (d, v) in fixture_monthly_index() {
        monthly.push_str(&format!("{d},{v:.4}\n"));
    }
    text(data.join("monthly.csv"), &monthly)?;
    for (name, body) in bundle_configs() {
        text(dir.join(name), &body)?;
    }
    for (name, panel) in [("market.csv", fixture_market()?), ("proxies.csv", fixture_proxies()?)] {
        let path = data.join(name);
        write_panel_csv(&panel, &path).map_err(|e| FixtureError::Io(path.clone(), e))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("cannot write {}: {1}", .0.display())]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
}
