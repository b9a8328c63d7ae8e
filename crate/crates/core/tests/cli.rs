use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sharpefolio::config::RunConfig;
use sharpefolio::fixtures::{write_bundle, FIVE_DAY_CSV};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sharpefolio"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn bundle() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(dir.path()).unwrap();
    dir
}

fn backtest(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["backtest", "--config", s(config), "--out", s(out)];
    args.extend(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    o
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn metric(metrics_csv: &Path, measure: &str) -> f64 {
    let text = fs::read_to_string(metrics_csv).unwrap();
    let line = text.lines().find(|l| l.starts_with(measure)).unwrap();
    line.split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn validate_accepts_fixture_config() {
    let dir = bundle();
    let o = run(&["validate", "--config", s(&dir.path().join("lstm.toml"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("hidden_units = 8"));
    assert!(out.contains("is valid"));
}

#[test]
fn validate_names_missing_data_file() {
    let dir = bundle();
    let cfg = dir.path().join("lstm.toml");
    fs::remove_file(dir.path().join("data/market.csv")).unwrap();
    let o = run(&["validate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("market.csv"), "{}", stderr(&o));
}

#[test]
fn validate_rejects_single_sample_batches() {
    let dir = bundle();
    let cfg = dir.path().join("lstm.toml");
    let text = fs::read_to_string(&cfg).unwrap().replace("epochs = 3", "epochs = 3\nbatch_size = 1");
    fs::write(&cfg, text).unwrap();
    let o = run(&["validate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Sharpe loss"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = bundle();
    let cfg = dir.path().join("balanced.toml");
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(&cfg, format!("colour = \"blue\"\n{text}")).unwrap();
    assert_eq!(run(&["validate", "--config", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn five_day_balanced_matches_hand_count() {
    let mut rows = FIVE_DAY_CSV.lines().skip(1).map(|l| {
        let f: Vec<f64> = l.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        f
    });
    let mut prev = rows.next().unwrap();
    let (mut positive, mut days) = (0, 0);
    for row in rows {
        let r: f64 = row.iter().zip(&prev).map(|(p, q)| 0.5 * (p / q - 1.0)).sum();
        positive += usize::from(r > 0.0);
        days += 1;
        prev = row;
    }
    let expected = positive as f64 / days as f64;

    let dir = bundle();
    let out = dir.path().join("out");
    backtest(&dir.path().join("balanced_five_day.toml"), &out, &[]);
    let got = metric(&out.join("metrics.csv"), "% of + Return");
    assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
}

#[test]
fn backtest_is_deterministic_and_contained() {
    let dir = bundle();
    let before: Vec<PathBuf> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    backtest(&dir.path().join("mvo.toml"), &a, &[]);
    backtest(&dir.path().join("mvo.toml"), &b, &["--jobs", "1"]);
    for f in ["returns.csv", "weights.csv", "metrics.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let mut after: Vec<PathBuf> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    after.retain(|p| !before.contains(p));
    after.sort();
    assert_eq!(after, vec![a.clone(), b]);
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["cost_rate"], 0.0001);
    assert!(a.join("config.toml").is_file());
}

#[test]
fn transformer_manifest_records_both_phases() {
    let dir = bundle();
    let out = dir.path().join("tr");
    backtest(&dir.path().join("transformer.toml"), &out, &[]);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["phases"], serde_json::json!(["pretrain", "finetune"]));
    assert!(out.join("train_log_pretrain.csv").is_file());
}

#[test]
fn bad_data_exits_with_data_code() {
    let dir = bundle();
    let csv = dir.path().join("data/five_day.csv");
    let text = fs::read_to_string(&csv).unwrap().replacen("102", "-102", 1);
    fs::write(&csv, text).unwrap();
    let o = run(&[
        "backtest",
        "--config",
        s(&dir.path().join("balanced_five_day.toml")),
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn compare_report_with_itself() {
    let dir = bundle();
    let a = dir.path().join("balanced");
    backtest(&dir.path().join("balanced.toml"), &a, &[]);
    // a second copy without a manifest is named after its directory
    let twin = dir.path().join("twin");
    fs::create_dir(&twin).unwrap();
    for e in fs::read_dir(&a).unwrap() {
        let p = e.unwrap().path();
        if p.file_name().unwrap() != "manifest.json" {
            fs::copy(&p, twin.join(p.file_name().unwrap())).unwrap();
        }
    }
    let out = dir.path().join("cmp");
    let o = run(&["compare", s(&twin), s(&a), "--baseline", "balanced", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = json(&out.join("comparison.json"));
    let p = c["comparisons"][0]["full"]["mann_whitney"]["p_value"].as_f64().unwrap();
    assert!(p > 0.99, "p = {p}");
    assert_eq!(c["comparisons"][0]["full"]["outperformance"], 0.0);
}

#[test]
fn compare_three_reports_with_zoom() {
    let dir = bundle();
    let names = ["balanced", "mvo", "lstm"];
    let dirs: Vec<PathBuf> = names.iter().map(|n| dir.path().join(n)).collect();
    for (n, d) in names.iter().zip(&dirs) {
        backtest(&dir.path().join(format!("{n}.toml")), d, &[]);
    }
    let out = dir.path().join("cmp");
    let mut args = vec!["compare"];
    args.extend(dirs.iter().map(|d| s(d)));
    args.extend(["--baseline", "balanced", "--zoom", "2012-01-01", "--out", s(&out)]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = json(&out.join("comparison.json"));
    let comparisons = c["comparisons"].as_array().unwrap();
    assert_eq!(comparisons.len(), 2);
    for cmp in comparisons {
        assert_eq!(cmp["baseline"], "balanced");
        assert!(cmp["full"]["mann_whitney"].is_object());
        // first trading day on or after the zoom date
        assert_eq!(cmp["zoom"]["start"], "2012-01-02");
        assert!(cmp["zoom"]["mann_whitney"].is_object());
    }
    let header = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(header.starts_with("Measure,balanced,mvo,lstm"));
}

#[test]
fn presets_only_miss_their_data() {
    let presets = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    let mut seen = 0;
    for e in fs::read_dir(&presets).unwrap() {
        let path = e.unwrap().path();
        let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let data_present = cfg.data_files().iter().all(|f| f.is_file());
        for d in cfg.diagnostics() {
            assert!(!data_present && d.contains("does not exist"), "{}: {d}", path.display());
        }
        seen += 1;
    }
    assert_eq!(seen, 5);
}
