use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hedgelab::generator::Generator;
use hedgelab::hedge::{compute_pl, delta_hedge_baseline, write_outcomes_csv};
use hedgelab::instruments::OptionSpec;
use hedgelab::market_data::{extract_windows, load_series, stylized_stats, DatasetLabel};
use hedgelab::nn::{config_hash, evaluate, price, train, MlpPolicy};
use hedgelab::paths::{derive_seed, read_batch, write_batch, BatchSidecar};
use hedgelab::risk::{indifference_price, RiskMeasure};
use hedgelab::tuner::{
    best_json, default_assignment, run_study, HedgingObjective, SearchSpace, StudyConfig,
};
use hedgelab::PricePath;
use serde_json::json;

use crate::config::{DatasetRole, ExperimentConfig, TableColumn};

/// Salts separating the random streams of one experiment.
mod salt {
    pub const TRAIN: u64 = 1;
    pub const VALIDATION: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const STATS: u64 = 4;
    pub const TUNE: u64 = 5;
    pub const DEFAULT_TRIAL: u64 = 6;
    pub const TABLE: u64 = 7;
    pub const DATASET: u64 = 100;
}

const INCOMPLETE: &str = "INCOMPLETE";

/// Output directory bookkeeping: an `INCOMPLETE` marker while running, and
/// a manifest listing every file once done.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn open(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        std::fs::write(
            root.join(INCOMPLETE),
            "run in progress or failed; outputs here are partial\n",
        )?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> Result<()> {
        let config_toml = toml::to_string(cfg).context("serializing resolved config")?;
        let config_name = format!("{command}.toml");
        self.write(&config_name, config_toml)?;
        let manifest = json!({
            "command": command,
            "config_hash": hex::encode(config_hash(&cfg.canonical_json())),
            "seed": cfg.seed,
            "versions": {
                "hedgelab": env!("CARGO_PKG_VERSION"),
                "checkpoint_format": 1,
            },
            "rerun": format!("hedgelab {command} --config {config_name}"),
            "outputs": self.files,
        });
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(self.root.join("manifest.json"), text)?;
        std::fs::remove_file(self.root.join(INCOMPLETE))?;
        Ok(())
    }
}

struct Dataset {
    name: String,
    role: Option<DatasetRole>,
    paths: Vec<PricePath>,
}

fn load_datasets(cfg: &ExperimentConfig) -> Result<Vec<Dataset>> {
    let window = cfg.option.maturity_days + 1;
    cfg.datasets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let paths = match (&d.path, d.generator) {
                (Some(file), _) => {
                    let label = match d.role {
                        DatasetRole::Development => DatasetLabel::Development,
                        DatasetRole::Test => DatasetLabel::Test,
                    };
                    let series = load_series(file, label)
                        .with_context(|| format!("dataset `{}` ({})", d.name, file.display()))?;
                    let windows = extract_windows(&series.closes, window, d.stride)?;
                    if windows.is_empty() {
                        bail!(hedgelab::Error::validation(format!(
                            "dataset `{}` has {} closes, fewer than one {window}-close window",
                            d.name,
                            series.len()
                        )));
                    }
                    windows
                }
                (None, Some(kind)) => {
                    let seed = derive_seed(cfg.seed, salt::DATASET + i as u64);
                    cfg.generator_for(kind).generate(d.paths, seed)?.paths
                }
                (None, None) => unreachable!("validated"),
            };
            Ok(Dataset {
                name: d.name.clone(),
                role: Some(d.role),
                paths,
            })
        })
        .collect()
}

/// Validation set (development dataset, else simulated hold-out) and the
/// evaluation datasets (configured ones, else the hold-out).
fn validation_and_eval(cfg: &ExperimentConfig, generator: &Generator) -> Result<(Vec<PricePath>, Vec<Dataset>)> {
    let datasets = load_datasets(cfg)?;
    let dev = datasets.iter().find(|d| d.role == Some(DatasetRole::Development));
    let validation = match dev {
        Some(d) => d.paths.clone(),
        None => {
            let seed = derive_seed(cfg.seed, salt::VALIDATION);
            generator.generate(cfg.training.val_paths, seed)?.paths
        }
    };
    let eval = if datasets.is_empty() {
        vec![Dataset {
            name: "holdout".into(),
            role: None,
            paths: validation.clone(),
        }]
    } else {
        datasets
    };
    Ok((validation, eval))
}

fn generate_training(cfg: &ExperimentConfig, generator: &Generator, n: usize) -> Result<Vec<PricePath>> {
    let out = generator.generate(n, derive_seed(cfg.seed, salt::TRAIN))?;
    if out.rejected > 0 {
        log::info!("{} degenerate simulations were redrawn", out.rejected);
    }
    Ok(out.paths)
}

const RESULTS_HEADER: &str = "derivative,dataset,measure,generator,price";

pub fn gen_paths(cfg: &ExperimentConfig) -> Result<()> {
    let mut out = OutputDir::open(&cfg.out)?;
    let generator = cfg.generator();
    let batch = generator
        .generate(cfg.training.paths, derive_seed(cfg.seed, salt::TRAIN))
        .context("stage `generate`")?;
    let sidecar = BatchSidecar {
        generator: generator.kind().label().to_string(),
        seed: cfg.seed,
        n_paths: batch.paths.len(),
        path_len: generator.horizon_days() + 1,
        config: generator.describe(),
        rejected: batch.rejected,
    };
    let csv = out.path("paths.csv");
    out.path("paths.json");
    write_batch(&csv, &batch.paths, &sidecar).context("stage `write`")?;
    out.finish("gen-paths", cfg)
}

pub fn train_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let mut out = OutputDir::open(&cfg.out)?;
    let generator = cfg.generator();
    let train_paths = generate_training(cfg, &generator, cfg.training.paths).context("stage `generate`")?;
    let (validation, eval) = validation_and_eval(cfg, &generator).context("stage `datasets`")?;
    let mut tc = cfg.train_config();
    tc.seed = derive_seed(cfg.seed, salt::POLICY);
    let (policy, report) = train(&train_paths, &validation, &cfg.option, &tc).context("stage `train`")?;
    for d in &report.diagnostics {
        log::warn!("{d}");
    }
    policy.save(&out.path("policy.bin"), &config_hash(&cfg.canonical_json()))?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    out.write("train_report.csv", buf)?;

    let mut results = String::from(RESULTS_HEADER) + "\n";
    let mut baselines = String::from("dataset,measure,unhedged,bs_delta\n");
    for d in &eval {
        let p = price(&policy, &d.paths, &cfg.option, &cfg.measure, cfg.cost, &cfg.vol)
            .with_context(|| format!("stage `evaluate` on `{}`", d.name))?;
        writeln!(
            results,
            "{},{},{},{},{p}",
            cfg.option.kind.label(),
            d.name,
            cfg.measure.label(),
            generator.kind().label()
        )?;
        let (unhedged, bs) = baseline_prices(cfg, &d.paths)?;
        writeln!(baselines, "{},{},{unhedged},{bs}", d.name, cfg.measure.label())?;
    }
    out.write("results.csv", results)?;
    out.write("baselines.csv", baselines)?;
    out.finish("train", cfg)
}

/// Unhedged and Black–Scholes delta-hedge prices, the latter at the
/// estimator's prior volatility.
fn baseline_prices(cfg: &ExperimentConfig, paths: &[PricePath]) -> Result<(f64, f64)> {
    let n = cfg.option.maturity_days;
    let zero = vec![0.0; n];
    let mut unhedged = Vec::with_capacity(paths.len());
    let mut hedged = Vec::with_capacity(paths.len());
    for p in paths {
        unhedged.push(compute_pl(p, &zero, &cfg.option, cfg.cost)?.pl);
        let deltas = delta_hedge_baseline(p, &cfg.option, cfg.vol.prior)?;
        hedged.push(compute_pl(p, &deltas, &cfg.option, cfg.cost)?.pl);
    }
    Ok((
        indifference_price(&unhedged, &cfg.measure)?,
        indifference_price(&hedged, &cfg.measure)?,
    ))
}

pub fn price_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let policy_path = cfg.price.policy.clone().unwrap_or_else(|| cfg.out.join("policy.bin"));
    let (policy, hash) = MlpPolicy::load(&policy_path)
        .with_context(|| format!("stage `load`: checkpoint {}", policy_path.display()))?;
    if hash != config_hash(&cfg.canonical_json()) {
        log::warn!(
            "checkpoint {} was trained under a different configuration",
            policy_path.display()
        );
    }
    let mut out = OutputDir::open(&cfg.out)?;
    let generator = cfg.generator();
    let (_, eval) = validation_and_eval(cfg, &generator).context("stage `datasets`")?;
    let mut results = String::from(RESULTS_HEADER) + "\n";
    for d in &eval {
        let outcomes = evaluate(&policy, &d.paths, &cfg.option, cfg.cost, &cfg.vol)
            .with_context(|| format!("stage `evaluate` on `{}`", d.name))?;
        let pl: Vec<f64> = outcomes.iter().map(|o| o.pl).collect();
        let p = indifference_price(&pl, &cfg.measure)?;
        writeln!(
            results,
            "{},{},{},{},{p}",
            cfg.option.kind.label(),
            d.name,
            cfg.measure.label(),
            generator.kind().label()
        )?;
        let mut buf = Vec::new();
        write_outcomes_csv(&mut buf, &outcomes)?;
        out.write(&format!("pl_{}.csv", d.name), buf)?;
    }
    out.write("prices.csv", results)?;
    out.finish("price", cfg)
}

fn objective_for(
    cfg: &ExperimentConfig,
    base: Generator,
    spec: OptionSpec,
    measure: RiskMeasure,
    validation: Vec<PricePath>,
) -> HedgingObjective {
    let mut train = cfg.train_config();
    train.epochs = cfg.tuning.epochs;
    train.measure = measure;
    HedgingObjective {
        base,
        spec,
        train,
        n_paths: cfg.tuning.paths,
        validation,
    }
}

fn study_config(cfg: &ExperimentConfig, seed: u64, ledger: PathBuf) -> StudyConfig {
    StudyConfig {
        strategy: cfg.tuning.strategy,
        n_trials: cfg.tuning.trials,
        seed,
        workers: cfg.parallel,
        ledger: Some(ledger),
    }
}

pub fn tune(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.tuning.trials == 0 {
        bail!(hedgelab::Error::validation("tuning needs at least one trial"));
    }
    let mut out = OutputDir::open(&cfg.out)?;
    let generator = cfg.generator();
    let (validation, _) = validation_and_eval(cfg, &generator).context("stage `datasets`")?;
    let objective = objective_for(cfg, generator, cfg.option, cfg.measure, validation);
    let space = SearchSpace::for_generator(generator.kind());
    let ledger = out.path("ledger.csv");
    let study_cfg = study_config(cfg, derive_seed(cfg.seed, salt::TUNE), ledger);
    let study = run_study(&space, &study_cfg, |a, seed| objective.evaluate(a, seed)).context("stage `tune`")?;

    let default = default_assignment(&objective.base, &objective.train);
    let default_seed = derive_seed(cfg.seed, salt::DEFAULT_TRIAL);
    let default_objective = objective.evaluate(&default, default_seed).ok();
    let mut best = best_json(&study);
    best["default"] = json!({
        "assignment": default,
        "objective": default_objective,
        "seed": default_seed,
    });
    out.write("best.json", serde_json::to_string_pretty(&best)? + "\n")?;

    let mut ranked = String::from("rank,trial_id,status,objective\n");
    for (rank, t) in study.trials.iter().enumerate() {
        writeln!(ranked, "{},{},{:?},{}", rank + 1, t.id, t.status, t.objective)?;
    }
    out.write("ranking.csv", ranked.to_lowercase())?;
    if study.best().is_none() {
        bail!("stage `tune`: every trial failed; see ledger.csv");
    }
    out.finish("tune", cfg)
}

pub fn stats(cfg: &ExperimentConfig) -> Result<()> {
    let mut out = OutputDir::open(&cfg.out)?;
    let series: Vec<Vec<f64>> = match &cfg.stats.input {
        Some(file) => load_stats_input(file).context("stage `load`")?,
        None => cfg
            .generator()
            .generate(cfg.stats.paths, derive_seed(cfg.seed, salt::STATS))
            .context("stage `generate`")?
            .paths
            .into_iter()
            .map(PricePath::into_inner)
            .collect(),
    };
    let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
    let s = stylized_stats(&refs, cfg.stats.max_lag, cfg.stats.bin_width).context("stage `stats`")?;
    let mut buf = Vec::new();
    s.write_kurtosis_csv(&mut buf)?;
    out.write("kurtosis.csv", buf)?;
    let mut buf = Vec::new();
    s.write_histogram_csv(&mut buf)?;
    out.write("histogram.csv", buf)?;
    out.finish("stats", cfg)
}

/// A `date,close` series is one long path; anything else is read as a
/// path batch.
fn load_stats_input(file: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    if text.lines().next().is_some_and(|h| h.trim_start().starts_with("date")) {
        let series = load_series(file, DatasetLabel::Other)?;
        return Ok(vec![series.closes]);
    }
    let (paths, _) = read_batch(file)?;
    Ok(paths.into_iter().map(PricePath::into_inner).collect())
}

pub fn reproduce_table(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.table.columns.iter().any(TableColumn::is_tuned) && cfg.tuning.trials == 0 {
        bail!(hedgelab::Error::validation("tuned columns need at least one trial"));
    }
    let mut out = OutputDir::open(&cfg.out)?;
    let (validation, eval) = validation_and_eval(cfg, &cfg.generator()).context("stage `datasets`")?;

    let mut rows = String::from(
        "derivative,dataset,utility,default_brownian,default_heston,tuned_market,tuned_brownian,tuned_heston\n",
    );
    let mut failures = String::from("derivative,utility,column,reason\n");
    for (di, kind) in cfg.table.derivatives.iter().enumerate() {
        let spec = OptionSpec { kind: *kind, ..cfg.option };
        // block[measure][dataset][column]
        let mut block: Vec<Vec<Vec<Option<f64>>>> = Vec::new();
        for (mi, measure) in cfg.table.measures.iter().enumerate() {
            let setting_seed = derive_seed(cfg.seed, salt::TABLE + (di * 64 + mi) as u64);
            let mut cells = vec![vec![None; TableColumn::ALL.len()]; eval.len()];
            for column in &cfg.table.columns {
                let ci = TableColumn::ALL.iter().position(|c| c == column).expect("known column");
                let stage = format!("{} / {} / {}", kind.label(), measure.label(), column.label());
                let policy = fit_column(cfg, *column, spec, *measure, &validation, setting_seed, ci, &mut out)
                    .with_context(|| format!("stage `{stage}`"))?;
                let Some(policy) = policy else {
                    log::warn!("{stage}: every tuning trial failed; cells left empty");
                    writeln!(failures, "{},{},{},every tuning trial failed", kind.label(), measure.label(), column.label())?;
                    continue;
                };
                for (k, d) in eval.iter().enumerate() {
                    let p = price(&policy, &d.paths, &spec, measure, cfg.cost, &cfg.vol)
                        .with_context(|| format!("stage `{stage}` pricing `{}`", d.name))?;
                    cells[k][ci] = Some(p);
                }
            }
            block.push(cells);
        }
        for (k, d) in eval.iter().enumerate() {
            for (mi, measure) in cfg.table.measures.iter().enumerate() {
                let cols: Vec<String> = block[mi][k]
                    .iter()
                    .map(|c| c.map(|v| v.to_string()).unwrap_or_default())
                    .collect();
                writeln!(rows, "{},{},{},{}", kind.label(), d.name, measure.label(), cols.join(","))?;
            }
        }
    }
    out.write("table.csv", rows)?;
    out.write("failures.csv", failures)?;
    out.finish("reproduce-table", cfg)
}

#[allow(clippy::too_many_arguments)]
fn fit_column(
    cfg: &ExperimentConfig,
    column: TableColumn,
    spec: OptionSpec,
    measure: RiskMeasure,
    validation: &[PricePath],
    setting_seed: u64,
    column_index: usize,
    out: &mut OutputDir,
) -> Result<Option<MlpPolicy>> {
    let base = cfg.generator_for(column.generator());
    let seed = derive_seed(setting_seed, column_index as u64);
    if !column.is_tuned() {
        let paths = base.generate(cfg.training.paths, derive_seed(seed, salt::TRAIN))?.paths;
        let mut tc = cfg.train_config();
        tc.measure = measure;
        tc.seed = derive_seed(seed, salt::POLICY);
        let (policy, _) = train(&paths, validation, &spec, &tc)?;
        return Ok(Some(policy));
    }
    let objective = objective_for(cfg, base, spec, measure, validation.to_vec());
    let space = SearchSpace::for_generator(column.generator());
    let slug: String = measure
        .label()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c.to_ascii_lowercase() } else { '_' })
        .collect();
    let ledger = out.path(&format!(
        "studies/{}_{}_{}.csv",
        spec.kind.label(),
        slug.trim_matches('_'),
        column.label()
    ));
    std::fs::create_dir_all(ledger.parent().expect("ledger has a parent"))?;
    let study_cfg = study_config(cfg, derive_seed(seed, salt::TUNE), ledger);
    let study = run_study(&space, &study_cfg, |a, s| objective.evaluate(a, s))?;
    let Some(best) = study.best() else {
        return Ok(None);
    };
    let (policy, _) = objective.fit(&best.assignment, best.seed)?;
    Ok(Some(policy))
}
