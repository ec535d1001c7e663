//! Experiment configuration: TOML file, `HEDGELAB__` environment overrides,
//! then command-line flags, in increasing precedence.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use hedgelab::generator::{Generator, GeneratorKind};
use hedgelab::hedge::VolEstimator;
use hedgelab::instruments::{OptionKind, OptionSpec};
use hedgelab::market::{MarketConfig, PopulationSpec};
use hedgelab::nn::{PolicyConfig, TrainConfig};
use hedgelab::risk::RiskMeasure;
use hedgelab::stoch::{GbmParams, HestonParams};
use hedgelab::tuner::Strategy;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "HEDGELAB__";

/// A configuration problem; maps to the validation exit code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Simulator used by `gen-paths`, `train`, `tune` and `stats`.
    pub generator: GeneratorKind,
    pub gbm: GbmParams,
    pub heston: HestonParams,
    pub market: MarketConfig,
    pub population: PopulationSpec,
    pub option: OptionSpec,
    pub measure: RiskMeasure,
    /// Proportional transaction cost rate `c`.
    pub cost: f64,
    pub vol: VolEstimator,
    pub training: TrainingBlock,
    pub tuning: TuningBlock,
    pub datasets: Vec<DatasetRef>,
    pub stats: StatsBlock,
    pub price: PriceBlock,
    pub table: TableBlock,
    /// Worker threads for path generation and tuning trials.
    pub parallel: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("out"),
            generator: GeneratorKind::Gbm,
            gbm: GbmParams::default(),
            heston: HestonParams::default(),
            market: MarketConfig::default(),
            population: PopulationSpec::default(),
            option: OptionSpec::default(),
            measure: RiskMeasure::Erm { lambda: 1.0 },
            cost: 0.0,
            vol: VolEstimator::default(),
            training: TrainingBlock::default(),
            tuning: TuningBlock::default(),
            datasets: Vec::new(),
            stats: StatsBlock::default(),
            price: PriceBlock::default(),
            table: TableBlock::default(),
            parallel: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingBlock {
    pub paths: usize,
    /// Simulated validation paths, used when no development dataset is set.
    pub val_paths: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub policy: PolicyConfig,
}

impl Default for TrainingBlock {
    fn default() -> Self {
        TrainingBlock {
            paths: 10_000,
            val_paths: 2_000,
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 256,
            policy: PolicyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningBlock {
    pub trials: usize,
    pub paths: usize,
    pub epochs: usize,
    pub strategy: Strategy,
}

impl Default for TuningBlock {
    fn default() -> Self {
        TuningBlock {
            trials: 20,
            paths: 1_000,
            epochs: 10,
            strategy: Strategy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    Development,
    Test,
}

/// An evaluation dataset: either a `date,close` CSV cut into windows, or a
/// simulated hold-out set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub name: String,
    pub role: DatasetRole,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub generator: Option<GeneratorKind>,
    #[serde(default = "default_dataset_paths")]
    pub paths: usize,
    #[serde(default = "one")]
    pub stride: usize,
}

fn default_dataset_paths() -> usize {
    2_000
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsBlock {
    /// Batch CSV from `gen-paths` or a `date,close` series; simulated when absent.
    pub input: Option<PathBuf>,
    pub paths: usize,
    pub max_lag: usize,
    pub bin_width: f64,
}

impl Default for StatsBlock {
    fn default() -> Self {
        StatsBlock {
            input: None,
            paths: 1_000,
            max_lag: 30,
            bin_width: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceBlock {
    /// Checkpoint to evaluate; defaults to `<out>/policy.bin`.
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableColumn {
    DefaultBrownian,
    DefaultHeston,
    TunedMarket,
    TunedBrownian,
    TunedHeston,
}

impl TableColumn {
    pub const ALL: [TableColumn; 5] = [
        TableColumn::DefaultBrownian,
        TableColumn::DefaultHeston,
        TableColumn::TunedMarket,
        TableColumn::TunedBrownian,
        TableColumn::TunedHeston,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            TableColumn::DefaultBrownian => "default_brownian",
            TableColumn::DefaultHeston => "default_heston",
            TableColumn::TunedMarket => "tuned_market",
            TableColumn::TunedBrownian => "tuned_brownian",
            TableColumn::TunedHeston => "tuned_heston",
        }
    }

    pub fn generator(&self) -> GeneratorKind {
        match self {
            TableColumn::DefaultBrownian | TableColumn::TunedBrownian => GeneratorKind::Gbm,
            TableColumn::DefaultHeston | TableColumn::TunedHeston => GeneratorKind::Heston,
            TableColumn::TunedMarket => GeneratorKind::Market,
        }
    }

    pub fn is_tuned(&self) -> bool {
        matches!(
            self,
            TableColumn::TunedMarket | TableColumn::TunedBrownian | TableColumn::TunedHeston
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableBlock {
    pub derivatives: Vec<OptionKind>,
    pub measures: Vec<RiskMeasure>,
    pub columns: Vec<TableColumn>,
}

impl Default for TableBlock {
    fn default() -> Self {
        TableBlock {
            derivatives: vec![OptionKind::EuropeanCall, OptionKind::LookbackCall],
            measures: vec![
                RiskMeasure::Erm { lambda: 1.0 },
                RiskMeasure::Erm { lambda: 10.0 },
                RiskMeasure::Cvar { alpha: 0.9 },
                RiskMeasure::Cvar { alpha: 0.95 },
                RiskMeasure::Cvar { alpha: 0.99 },
            ],
            columns: TableColumn::ALL.to_vec(),
        }
    }
}

/// Flag values that override the file and environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub paths: Option<usize>,
    pub epochs: Option<usize>,
    pub trials: Option<usize>,
    pub parallel: Option<usize>,
    /// `--paths`/`--epochs` target the tuning block instead of training.
    pub for_tuning: bool,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, env: &[(String, String)], flags: &Overrides) -> Result<Self> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("reading config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| ConfigError(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in env {
            if let Some(rest) = key.strip_prefix(ENV_PREFIX) {
                apply_env(&mut root, rest, value)?;
            }
        }
        let mut cfg: ExperimentConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(format!("config: {e}")))?;
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, flags: &Overrides) {
        if let Some(s) = flags.seed {
            self.seed = s;
        }
        if let Some(o) = &flags.out {
            self.out = o.clone();
        }
        let (paths, epochs) = if flags.for_tuning {
            (&mut self.tuning.paths, &mut self.tuning.epochs)
        } else {
            (&mut self.training.paths, &mut self.training.epochs)
        };
        if let Some(p) = flags.paths {
            *paths = p;
        }
        if let Some(e) = flags.epochs {
            *epochs = e;
        }
        if let Some(t) = flags.trials {
            self.tuning.trials = t;
        }
        if let Some(p) = flags.parallel {
            self.parallel = p;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |r: hedgelab::Result<()>, block: &str| {
            r.map_err(|e| ConfigError(format!("[{block}] {e}")))
        };
        check(self.option.validate(), "option")?;
        check(self.measure.validate(), "measure")?;
        check(self.gbm.validate(), "gbm")?;
        check(self.heston.validate(), "heston")?;
        check(self.market.validate(), "market")?;
        check(self.population.validate(), "population")?;
        check(self.train_config().validate(), "training")?;
        if !(self.cost >= 0.0 && self.cost.is_finite()) {
            bail!(ConfigError(format!("cost must be nonnegative, got {}", self.cost)));
        }
        if self.parallel == 0 {
            bail!(ConfigError("parallel must be >= 1".into()));
        }
        if self.training.paths == 0 || self.training.val_paths == 0 {
            bail!(ConfigError("[training] paths and val_paths must be >= 1".into()));
        }
        if self.tuning.paths == 0 {
            bail!(ConfigError("[tuning] paths must be >= 1".into()));
        }
        for m in &self.table.measures {
            check(m.validate(), "table")?;
        }
        let mut dev = 0;
        for (i, d) in self.datasets.iter().enumerate() {
            let ok_name = !d.name.is_empty()
                && d.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok_name {
                bail!(ConfigError(format!(
                    "dataset name `{}` must be nonempty and use only letters, digits, `_` or `-`",
                    d.name
                )));
            }
            if self.datasets[..i].iter().any(|o| o.name == d.name) {
                bail!(ConfigError(format!("duplicate dataset name `{}`", d.name)));
            }
            if d.path.is_some() == d.generator.is_some() {
                bail!(ConfigError(format!(
                    "dataset `{}` needs exactly one of `path` or `generator`",
                    d.name
                )));
            }
            if d.stride == 0 || d.paths == 0 {
                bail!(ConfigError(format!("dataset `{}`: stride and paths must be >= 1", d.name)));
            }
            if let Some(p) = &d.path {
                if !p.exists() {
                    bail!(ConfigError(format!(
                        "dataset `{}` file {} does not exist",
                        d.name,
                        p.display()
                    )));
                }
            }
            dev += usize::from(d.role == DatasetRole::Development);
        }
        if dev > 1 {
            bail!(ConfigError("at most one development dataset may be configured".into()));
        }
        Ok(())
    }

    pub fn generator_for(&self, kind: GeneratorKind) -> Generator {
        let g = match kind {
            GeneratorKind::Gbm => Generator::Gbm(self.gbm),
            GeneratorKind::Heston => Generator::Heston(self.heston),
            GeneratorKind::Market => Generator::Market {
                config: self.market,
                population: self.population,
            },
        };
        g.with_horizon(self.option.maturity_days)
    }

    pub fn generator(&self) -> Generator {
        self.generator_for(self.generator)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.training.learning_rate,
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            seed: self.seed,
            cost_rate: self.cost,
            measure: self.measure,
            vol: self.vol,
            policy: self.training.policy,
        }
    }

    /// Canonical JSON of the resolved configuration, without the output
    /// directory: where results land does not change them.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out");
        }
        value.to_string()
    }
}

/// Sets `a.b.c = value` for the override key `A__B__C`. Values parse as TOML
/// scalars when possible and fall back to strings.
fn apply_env(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<String> = key.split("__").map(str::to_ascii_lowercase).collect();
    if parts.iter().any(String::is_empty) {
        bail!(ConfigError(format!("malformed override {ENV_PREFIX}{key}")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => bail!(ConfigError(format!(
                "override {ENV_PREFIX}{key}: `{part}` is not a table"
            ))),
        };
    }
    table.insert(parts[parts.len() - 1].clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = ExperimentConfig::load(None, &[], &Overrides::default()).unwrap();
        assert_eq!(cfg.training.paths, 10_000);
        assert_eq!(cfg.generator, GeneratorKind::Gbm);
        assert_eq!(cfg.table.columns.len(), 5);
    }

    #[test]
    fn env_and_flags_override_in_order() {
        let vars = env(&[
            ("HEDGELAB__TRAINING__EPOCHS", "7"),
            ("HEDGELAB__GENERATOR", "heston"),
            ("HEDGELAB__HESTON__RHO", "-0.5"),
            ("HEDGELAB__MEASURE__KIND", "cvar"),
            ("HEDGELAB__MEASURE__ALPHA", "0.9"),
            ("UNRELATED", "1"),
        ]);
        let flags = Overrides {
            epochs: Some(3),
            ..Overrides::default()
        };
        let cfg = ExperimentConfig::load(None, &vars, &flags).unwrap();
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.generator, GeneratorKind::Heston);
        assert_eq!(cfg.heston.rho, -0.5);
        assert_eq!(cfg.measure, RiskMeasure::Cvar { alpha: 0.9 });
    }

    #[test]
    fn tuning_flags_target_the_tuning_block() {
        let flags = Overrides {
            paths: Some(50),
            epochs: Some(2),
            for_tuning: true,
            ..Overrides::default()
        };
        let cfg = ExperimentConfig::load(None, &[], &flags).unwrap();
        assert_eq!((cfg.tuning.paths, cfg.tuning.epochs), (50, 2));
        assert_eq!(cfg.training.paths, 10_000);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for vars in [
            env(&[("HEDGELAB__GENERATOR", "levy")]),
            env(&[("HEDGELAB__COST", "-1")]),
            env(&[("HEDGELAB__TRAINING__TYPO", "1")]),
            env(&[("HEDGELAB__SEED__X", "1")]),
        ] {
            let err = ExperimentConfig::load(None, &vars, &Overrides::default()).unwrap_err();
            assert!(err.downcast_ref::<ConfigError>().is_some(), "{err:#}");
        }
    }

    #[test]
    fn file_config_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            r#"
seed = 5
generator = "market"
[option]
kind = "lookback_call"
[population]
w_f = 3.0
[[datasets]]
name = "holdout"
role = "development"
generator = "heston"
paths = 10
"#,
        )
        .unwrap();
        let cfg = ExperimentConfig::load(Some(&path), &[], &Overrides::default()).unwrap();
        assert_eq!(cfg.seed, 5);
        assert!(cfg.option.is_lookback());
        assert_eq!(cfg.option.maturity_days, 20);
        assert_eq!(cfg.population.w_f, 3.0);
        assert_eq!(cfg.population.w_c, 1.0);
        assert_eq!(cfg.datasets[0].paths, 10);
    }
}
