//! Uniform front end over the three path simulators.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::market::{market_paths, MarketConfig, PopulationSpec};
use crate::paths::PricePath;
use crate::stoch::{gbm_paths, heston_paths, GbmParams, HestonParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Market,
    Gbm,
    Heston,
}

impl GeneratorKind {
    pub fn label(&self) -> &'static str {
        match self {
            GeneratorKind::Market => "market",
            GeneratorKind::Gbm => "gbm",
            GeneratorKind::Heston => "heston",
        }
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "market" => Ok(GeneratorKind::Market),
            "gbm" => Ok(GeneratorKind::Gbm),
            "heston" => Ok(GeneratorKind::Heston),
            other => Err(crate::Error::validation(format!(
                "unknown generator `{other}` (expected market, gbm or heston)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    Market {
        config: MarketConfig,
        population: PopulationSpec,
    },
    Gbm(GbmParams),
    Heston(HestonParams),
}

/// Generated paths plus the number of degenerate draws that were replaced.
#[derive(Debug, Clone)]
pub struct Generated {
    pub paths: Vec<PricePath>,
    pub rejected: u64,
}

impl Generator {
    pub fn kind(&self) -> GeneratorKind {
        match self {
            Generator::Market { .. } => GeneratorKind::Market,
            Generator::Gbm(_) => GeneratorKind::Gbm,
            Generator::Heston(_) => GeneratorKind::Heston,
        }
    }

    /// Number of daily steps per path.
    pub fn horizon_days(&self) -> usize {
        match self {
            Generator::Market { config, .. } => config.days,
            Generator::Gbm(p) => p.n_steps,
            Generator::Heston(p) => p.n_steps,
        }
    }

    /// Same generator with the horizon set to `days` daily steps.
    pub fn with_horizon(mut self, days: usize) -> Self {
        match &mut self {
            Generator::Market { config, .. } => config.days = days,
            Generator::Gbm(p) => p.n_steps = days,
            Generator::Heston(p) => p.n_steps = days,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Generator::Market { config, population } => {
                config.validate()?;
                population.validate()
            }
            Generator::Gbm(p) => p.validate(),
            Generator::Heston(p) => p.validate(),
        }
    }

    pub fn generate(&self, n_paths: usize, seed: u64) -> Result<Generated> {
        ensure!(n_paths >= 1, "need at least one path");
        let (paths, rejected) = match self {
            Generator::Market { config, population } => {
                let b = market_paths(config, population, n_paths, seed)?;
                (b.paths, b.rejected)
            }
            Generator::Gbm(p) => {
                let b = gbm_paths(p, n_paths, seed)?;
                (b.paths, b.rejected)
            }
            Generator::Heston(p) => {
                let b = heston_paths(p, n_paths, seed)?;
                (b.paths, b.rejected)
            }
        };
        Ok(Generated { paths, rejected })
    }

    /// Parameters as JSON, for sidecars and manifests.
    pub fn describe(&self) -> serde_json::Value {
        match self {
            Generator::Market { config, population } => serde_json::json!({
                "market": config,
                "population": population,
            }),
            Generator::Gbm(p) => serde_json::json!({ "gbm": p }),
            Generator::Heston(p) => serde_json::json!({ "heston": p }),
        }
    }
}
