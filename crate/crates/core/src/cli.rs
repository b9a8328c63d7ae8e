//! The `sharpefolio` command line: validate, backtest, replicate, compare
//! and fixture.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backtest::{
    self, compare, load_report, replicate_runs, replicate_seeds, run_strategy, write_report,
    BacktestError, BacktestOptions, BacktestReport, Segment, COMPARISON_FILE, METRICS_FILE,
};
use crate::config::{ConfigError, RunConfig};
use crate::fixtures::{self, FixtureError};
use crate::market_data::DataError;
use crate::parallel::{with_jobs, Execution};
use crate::stats::TestResult;
use crate::training::TrainError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPLICATE_FILE: &str = "replicate.json";
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "sharpefolio", version, about = "Sharpe-loss neural portfolio allocation and walk-forward backtests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a config and print the resolved settings.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the configured strategy once and write its report.
    Backtest(RunArgs),
    /// Run a neural strategy once per derived seed and z-test the Sharpe ratios.
    Replicate {
        #[command(flatten)]
        run: RunArgs,
        /// Overrides `replicate.runs`.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Compare report directories against a baseline.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        zoom: Option<NaiveDate>,
        #[arg(long)]
        out: PathBuf,
        /// Rolling Sharpe window; defaults to the one recorded in the manifests.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Write the synthetic fixture data and example configs.
    Fixture {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs sequentially, 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

/// Failure classes, mapped to the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<FixtureError> for CliError {
    fn from(e: FixtureError) -> Self {
        Self::Data(e.to_string())
    }
}

fn classify_train(e: &TrainError) -> fn(String) -> CliError {
    match e {
        TrainError::Config(_) | TrainError::Dimension { .. } | TrainError::Model(_) => CliError::Config,
        TrainError::TooFewSamples { .. } | TrainError::Data(_) | TrainError::Io(_) => CliError::Data,
        TrainError::Diverged { .. } | TrainError::Tensor(_) => CliError::Numerical,
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        use BacktestError as B;
        let kind: fn(String) -> CliError = match &e {
            B::Schedule(_) | B::Invalid(_) | B::Alloc(_) => CliError::Config,
            B::Train(t) => classify_train(t),
            B::UndefinedSharpe { .. } | B::Metric(_) | B::Stat(_) => CliError::Numerical,
            B::Uncovered { .. }
            | B::InsufficientHistory { .. }
            | B::Calendar(_)
            | B::Data(_)
            | B::Io { .. }
            | B::Csv { .. }
            | B::Parse { .. } => CliError::Data,
        };
        kind(e.to_string())
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce an output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub command: String,
    pub version: String,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub config_path: String,
    pub config_sha256: String,
    pub data_files: Vec<FileDigest>,
    pub cost_rate: f64,
    pub rolling_window: usize,
    /// Training phases run: `pretrain` and `finetune`, or `train`.
    pub phases: Vec<String>,
    pub segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replicate_seeds: Vec<u64>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = fs::File::open(path).map_err(io(path))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

pub fn read_manifest(dir: &Path) -> Option<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numerical(format!("{}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(io(path))
}

struct Prepared {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    options: BacktestOptions,
}

fn prepare(args: &RunArgs) -> Result<Prepared, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    cfg.validate()?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))?;
    let options = BacktestOptions {
        cost_rate: cfg.cost_rate,
        rolling_window: cfg.rolling_window,
        exec: Execution::from_jobs(args.jobs),
    };
    Ok(Prepared {
        seed: cfg.seed.unwrap_or(0),
        cfg,
        out,
        options,
    })
}

fn manifest(p: &Prepared, args: &RunArgs, command: &str) -> Result<Manifest, CliError> {
    let cfg = &p.cfg;
    let data_files = cfg
        .data_files()
        .iter()
        .map(|f| {
            Ok(FileDigest {
                path: f.display().to_string(),
                sha256: sha256_file(f)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let phases = match (cfg.strategy.kind.is_neural(), cfg.pretrain.is_some()) {
        (true, true) => vec!["pretrain".to_string(), "finetune".to_string()],
        (true, false) => vec!["train".to_string()],
        (false, _) => vec![],
    };
    Ok(Manifest {
        name: cfg.name(),
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        preset: cfg.preset.clone(),
        seed: cfg.strategy.kind.is_neural().then_some(p.seed),
        config_path: args.config.display().to_string(),
        config_sha256: sha256_file(&args.config)?,
        data_files,
        cost_rate: cfg.cost_rate,
        rolling_window: cfg.rolling_window,
        phases,
        segments: cfg.walk_forward().map_err(CliError::Config)?.segments,
        replicate_seeds: vec![],
    })
}

fn begin_output(p: &Prepared, args: &RunArgs) -> Result<(), CliError> {
    fs::create_dir_all(&p.out).map_err(io(&p.out))?;
    let copy = p.out.join(CONFIG_COPY);
    fs::copy(&args.config, &copy).map_err(io(&copy))?;
    Ok(())
}

fn print_summary(report: &BacktestReport) {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
    println!(
        "{}: {} days, sharpe {}, cumulative return {}, max drawdown {}",
        report.name,
        report.dates.len(),
        fmt(report.metrics.sharpe),
        fmt(Some(report.metrics.cumulative_return)),
        fmt(Some(report.metrics.max_drawdown)),
    );
}

fn cmd_validate(config: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let diagnostics = cfg.diagnostics();
    print!("{}", cfg.effective_toml());
    if diagnostics.is_empty() {
        println!("# {} is valid", config.display());
        Ok(())
    } else {
        for d in &diagnostics {
            eprintln!("error: {d}");
        }
        Err(CliError::Config(format!(
            "{} problem(s) in {}",
            diagnostics.len(),
            config.display()
        )))
    }
}

fn cmd_backtest(args: &RunArgs) -> Result<(), CliError> {
    let p = prepare(args)?;
    let panel = p.cfg.load_panel()?;
    let strategy = p.cfg.build_strategy()?;
    let schedule = p.cfg.walk_forward().map_err(CliError::Config)?;
    let manifest = manifest(&p, args, "backtest")?;
    let report = with_jobs(args.jobs, || {
        run_strategy(&p.cfg.name(), &strategy, &panel, &schedule, p.seed, &p.options)
    })?;
    begin_output(&p, args)?;
    write_report(&report, &p.out)?;
    write_json(&p.out.join(MANIFEST_FILE), &manifest)?;
    print_summary(&report);
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReplicateSummary {
    name: String,
    seeds: Vec<u64>,
    sharpes: Vec<f64>,
    mean_sharpe: f64,
    std_sharpe: f64,
    z_test: Option<TestResult>,
}

fn cmd_replicate(args: &RunArgs, runs: Option<usize>) -> Result<(), CliError> {
    let p = prepare(args)?;
    let section = p.cfg.replicate.clone().unwrap_or(crate::config::ReplicateSection {
        runs: 30,
        reference_sample: None,
        reference_mean: None,
        reference_std: None,
        reference_n: None,
    });
    let n = runs.unwrap_or(section.runs);
    if n < 2 {
        return Err(CliError::Config(format!("replicate needs at least 2 runs, got {n}")));
    }
    if !p.cfg.strategy.kind.is_neural() {
        return Err(CliError::Config("replicate applies to neural strategies only".into()));
    }
    let panel = p.cfg.load_panel()?;
    let strategy = p.cfg.build_strategy()?;
    let schedule = p.cfg.walk_forward().map_err(CliError::Config)?;
    let seeds = replicate_seeds(p.seed, n);
    let mut manifest = manifest(&p, args, "replicate")?;
    manifest.replicate_seeds = seeds.clone();
    let reference = section.reference();
    let rep = with_jobs(args.jobs, || {
        replicate_runs(&p.cfg.name(), &strategy, &panel, &schedule, &seeds, reference.as_ref(), &p.options)
    })?;
    begin_output(&p, args)?;
    for (i, r) in rep.reports.iter().enumerate() {
        write_report(r, &p.out.join(format!("run_{:02}", i + 1)))?;
    }
    let n = rep.sharpes.len() as f64;
    let mean = rep.sharpes.iter().sum::<f64>() / n;
    let var = rep.sharpes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let summary = ReplicateSummary {
        name: p.cfg.name(),
        seeds: rep.seeds.clone(),
        sharpes: rep.sharpes.clone(),
        mean_sharpe: mean,
        std_sharpe: var.sqrt(),
        z_test: rep.z_test,
    };
    write_json(&p.out.join(REPLICATE_FILE), &summary)?;
    write_json(&p.out.join(MANIFEST_FILE), &manifest)?;
    println!(
        "{}: {} runs, mean sharpe {:.4}, std {:.4}",
        summary.name, rep.seeds.len(), summary.mean_sharpe, summary.std_sharpe
    );
    if let Some(z) = &summary.z_test {
        println!("z = {:.4}, p = {:.4}", z.statistic, z.p_value);
    }
    Ok(())
}

fn cmd_compare(
    dirs: &[PathBuf],
    baseline: &str,
    zoom: Option<NaiveDate>,
    out: &Path,
    window: Option<usize>,
) -> Result<(), CliError> {
    let manifests: Vec<Option<Manifest>> = dirs.iter().map(|d| read_manifest(d)).collect();
    let window = match window {
        Some(w) => w,
        None => manifests
            .iter()
            .flatten()
            .map(|m| m.rolling_window)
            .next()
            .unwrap_or(backtest::DEFAULT_ROLLING_WINDOW),
    };
    let reports = dirs
        .iter()
        .zip(&manifests)
        .map(|(d, m)| {
            let name = match m {
                Some(m) => m.name.clone(),
                None => d
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| d.display().to_string()),
            };
            load_report(d, &name, window)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut names = std::collections::HashSet::new();
    if let Some(r) = reports.iter().find(|r| !names.insert(r.name.clone())) {
        return Err(CliError::Config(format!("two reports are named `{}`", r.name)));
    }
    let cmp = compare(&reports, baseline, zoom)?;
    fs::create_dir_all(out).map_err(io(out))?;
    write_json(&out.join(COMPARISON_FILE), &cmp)?;
    let path = out.join(METRICS_FILE);
    let file = fs::File::create(&path).map_err(io(&path))?;
    cmp.write_metrics_csv(file)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for c in &cmp.comparisons {
        let p = c
            .full
            .mann_whitney
            .as_ref()
            .map(|t| format!("{:.4}", t.p_value))
            .unwrap_or_else(|| "n/a".into());
        println!("{} vs {}: mann-whitney p = {p}", c.strategy, c.baseline);
    }
    Ok(())
}

fn cmd_fixture(out: &Path) -> Result<(), CliError> {
    for p in fixtures::write_bundle(out)? {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Backtest(args) => cmd_backtest(&args),
        Command::Replicate { run, runs } => cmd_replicate(&run, runs),
        Command::Compare {
            reports,
            baseline,
            zoom,
            out,
            window,
        } => cmd_compare(&reports, &baseline, zoom, &out, window),
        Command::Fixture { out } => cmd_fixture(&out),
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SHARPEFOLIO_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
