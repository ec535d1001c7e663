use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_hedgelab");

fn hedgelab(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = hedgelab(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

const SMALL: &str = r#"
[training]
paths = 120
val_paths = 80
epochs = 2
batch_size = 64

[tuning]
trials = 2
paths = 80
epochs = 1
"#;

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, format!("{extra}\n{SMALL}")).unwrap();
    path
}

/// Deterministic random-walk index, one close per calendar day.
fn write_series(path: &Path, n: usize, seed: u64) {
    let mut text = String::from("date,close\n");
    let mut close = 3000.0;
    let mut state = seed | 1;
    for i in 0..n {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        let u = (state % 2001) as f64 / 1000.0 - 1.0;
        close *= 1.0 + 0.01 * u;
        text.push_str(&format!("{},{close:.4}\n", chrono_like_date(i as u32)));
    }
    std::fs::write(path, text).unwrap();
}

/// ISO date `days` after 2000-01-01, using 28-day months to stay valid.
fn chrono_like_date(days: u32) -> String {
    let year = 2000 + days / (12 * 28);
    let month = days / 28 % 12 + 1;
    let day = days % 28 + 1;
    format!("{year:04}-{month:02}-{day:02}")
}

#[test]
fn gen_paths_writes_batch_sidecar_and_manifest() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["gen-paths", "--out", "g", "--paths", "7", "--seed", "3"]);
    let csv = read(dir.path().join("g/paths.csv"));
    assert_eq!(csv.lines().count(), 7);
    for line in csv.lines() {
        assert_eq!(line.split(',').count(), 21, "21 prices per 20-day path: {line}");
    }
    let sidecar: serde_json::Value = serde_json::from_str(&read(dir.path().join("g/paths.json"))).unwrap();
    assert_eq!(sidecar["generator"], "gbm");
    assert_eq!(sidecar["n_paths"], 7);
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path().join("g/manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "gen-paths");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(!dir.path().join("g/INCOMPLETE").exists());
}

#[test]
fn seed_changes_paths() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["gen-paths", "--out", "a", "--paths", "3", "--seed", "1"]);
    ok(dir.path(), &["gen-paths", "--out", "b", "--paths", "3", "--seed", "2"]);
    assert_ne!(read(dir.path().join("a/paths.csv")), read(dir.path().join("b/paths.csv")));
}

#[test]
fn train_then_price_reproduces_the_trained_price() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    ok(dir.path(), &["train", "--config", cfg, "--out", "run"]);
    let results = read(dir.path().join("run/results.csv"));
    let mut lines = results.lines();
    assert_eq!(lines.next(), Some("derivative,dataset,measure,generator,price"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..4], ["european", "holdout", "ERM(1)", "gbm"]);
    let trained: f64 = row[4].parse().unwrap();

    let report = read(dir.path().join("run/train_report.csv"));
    assert_eq!(report.lines().count(), 3);
    assert!(read(dir.path().join("run/baselines.csv")).starts_with("dataset,measure,unhedged,bs_delta\n"));

    ok(dir.path(), &["price", "--config", cfg, "--out", "run"]);
    let prices = read(dir.path().join("run/prices.csv"));
    let priced: f64 = prices.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(trained.to_bits(), priced.to_bits());
    let pl = read(dir.path().join("run/pl_holdout.csv"));
    assert_eq!(pl.lines().count(), 81);
}

#[test]
fn train_rerun_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    ok(dir.path(), &["train", "--config", cfg, "--out", "a"]);
    ok(dir.path(), &["train", "--config", cfg, "--out", "b"]);
    for f in ["results.csv", "train_report.csv", "baselines.csv", "policy.bin"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn recorded_config_reruns_the_experiment() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "seed = 11");
    ok(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--out", "run", "--epochs", "1"]);
    let first = read(dir.path().join("run/results.csv"));
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path().join("run/manifest.json"))).unwrap();
    assert_eq!(manifest["rerun"], "hedgelab train --config train.toml");
    ok(dir.path(), &["train", "--config", "run/train.toml", "--out", "again"]);
    assert_eq!(first, read(dir.path().join("again/results.csv")));
}

#[test]
fn historical_datasets_drive_validation_and_evaluation() {
    let dir = TempDir::new().unwrap();
    write_series(&dir.path().join("dev.csv"), 60, 1);
    write_series(&dir.path().join("test.csv"), 40, 2);
    let cfg = write_config(
        dir.path(),
        r#"
[[datasets]]
name = "dev"
role = "development"
path = "dev.csv"

[[datasets]]
name = "test"
role = "test"
path = "test.csv"
stride = 5
"#,
    );
    ok(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--out", "run"]);
    let results = read(dir.path().join("run/results.csv"));
    let names: Vec<&str> = results.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(names, ["dev", "test"]);
}

#[test]
fn short_dataset_is_a_validation_error_and_marks_output_incomplete() {
    let dir = TempDir::new().unwrap();
    write_series(&dir.path().join("dev.csv"), 10, 1);
    let cfg = write_config(
        dir.path(),
        "[[datasets]]\nname = \"dev\"\nrole = \"development\"\npath = \"dev.csv\"\n",
    );
    let out = hedgelab(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--out", "run"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage `datasets`"), "{stderr}");
    assert!(dir.path().join("run/INCOMPLETE").exists());
    assert!(!dir.path().join("run/manifest.json").exists());
}

#[test]
fn invalid_configuration_exits_with_2() {
    let dir = TempDir::new().unwrap();
    type Case<'a> = (Vec<&'a str>, Vec<(&'a str, &'a str)>);
    let cases: Vec<Case> = vec![
        (vec!["train"], vec![("HEDGELAB__GENERATOR", "bogus")]),
        (vec!["train", "--config", "missing.toml"], vec![]),
        (vec!["train", "--paths", "0"], vec![]),
        (vec!["train"], vec![("HEDGELAB__GBM__SIGMA", "-1")]),
        (vec!["train"], vec![("HEDGELAB__MEASURE__ALPHA", "1.5"), ("HEDGELAB__MEASURE__KIND", "cvar")]),
        (vec!["tune", "--trials", "0"], vec![]),
    ];
    for (args, env) in cases {
        let out = Command::new(BIN)
            .current_dir(dir.path())
            .args(&args)
            .args(["--out", "x"])
            .envs(env.iter().copied())
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?} {env:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn missing_checkpoint_is_a_runtime_failure() {
    let dir = TempDir::new().unwrap();
    let out = hedgelab(dir.path(), &["price", "--out", "nothing-here"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `load`"));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = TempDir::new().unwrap();
    std::fs::create_dir_all(dir.path().join("run")).unwrap();
    std::fs::write(dir.path().join("run/policy.bin"), b"HLPOLICYgarbage").unwrap();
    let out = hedgelab(dir.path(), &["price", "--out", "run"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn stats_on_an_index_series() {
    let dir = TempDir::new().unwrap();
    write_series(&dir.path().join("idx.csv"), 300, 5);
    let cfg = write_config(dir.path(), "[stats]\ninput = \"idx.csv\"\nmax_lag = 5\n");
    ok(dir.path(), &["stats", "--config", cfg.to_str().unwrap(), "--out", "s"]);
    let kurt = read(dir.path().join("s/kurtosis.csv"));
    assert_eq!(kurt.lines().count(), 6);
    let hist = read(dir.path().join("s/histogram.csv"));
    let mass: f64 = hist
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((mass - 1.0).abs() < 1e-9, "histogram mass {mass}");
}

#[test]
fn stats_on_a_generated_batch_file() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["gen-paths", "--out", "g", "--paths", "50"]);
    let cfg = write_config(dir.path(), "[stats]\ninput = \"g/paths.csv\"\nmax_lag = 3\n");
    ok(dir.path(), &["stats", "--config", cfg.to_str().unwrap(), "--out", "s"]);
    assert_eq!(read(dir.path().join("s/kurtosis.csv")).lines().count(), 4);
}

#[test]
fn tune_writes_ledger_and_resumes_without_new_trials() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    ok(dir.path(), &["tune", "--config", cfg, "--out", "t"]);
    let ledger = read(dir.path().join("t/ledger.csv"));
    assert!(ledger.starts_with("trial_id,status,objective,seed,learning_rate,mu,sigma\n"));
    assert_eq!(ledger.lines().count(), 3);
    let best: serde_json::Value = serde_json::from_str(&read(dir.path().join("t/best.json"))).unwrap();
    assert!(best["objective"].as_f64().unwrap().is_finite());
    assert!(best["default"]["objective"].as_f64().is_some());

    ok(dir.path(), &["tune", "--config", cfg, "--out", "t"]);
    assert_eq!(ledger, read(dir.path().join("t/ledger.csv")));
    ok(dir.path(), &["tune", "--config", cfg, "--out", "t", "--trials", "3"]);
    let extended = read(dir.path().join("t/ledger.csv"));
    assert!(extended.starts_with(&ledger));
    assert_eq!(extended.lines().count(), 4);
}

#[test]
fn reproduce_table_layout() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[table]
derivatives = ["european_call"]
measures = [{ kind = "erm", lambda = 1.0 }, { kind = "cvar", alpha = 0.9 }]
columns = ["default_brownian", "tuned_heston"]
"#,
    );
    ok(dir.path(), &["reproduce-table", "--config", cfg.to_str().unwrap(), "--out", "tab"]);
    let table = read(dir.path().join("tab/table.csv"));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "derivative,dataset,utility,default_brownian,default_heston,tuned_market,tuned_brownian,tuned_heston"
    );
    assert_eq!(lines.len(), 3);
    for (line, utility) in lines[1..].iter().zip(["ERM(1)", "CVaR(0.9)"]) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(&cells[..3], ["european", "holdout", utility]);
        assert!(cells[3].parse::<f64>().is_ok());
        assert_eq!(cells[4], "");
        assert_eq!(cells[5], "");
        assert_eq!(cells[6], "");
        assert!(cells[7].parse::<f64>().is_ok());
    }
    assert!(dir.path().join("tab/studies/european_erm_1_tuned_heston.csv").exists());
}
