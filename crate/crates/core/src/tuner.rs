//! Discrete hyperparameter search over simulator and training parameters.
//!
//! Two samplers are provided: uniform random search over the constrained
//! grid, and a categorical TPE-style sampler that, after a warm-up of random
//! trials, favours values that are frequent among the best trials and rare
//! among the rest. Every trial's randomness comes from `(study seed, trial
//! index)`, so a study is a deterministic function of its inputs.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::generator::{Generator, GeneratorKind};
use crate::instruments::OptionSpec;
use crate::market::{MarketConfig, PopulationSpec};
use crate::nn::{train, MlpPolicy, TrainConfig, TrainReport};
use crate::paths::{derive_seed, substream, PricePath};
use crate::stoch::{GbmParams, HestonParams};

pub type Assignment = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    grids: Vec<Grid>,
    /// `(lo, hi)` key pairs that must satisfy `lo <= hi`.
    constraints: Vec<(String, String)>,
}

/// `lo/den, (lo+1)/den, .., hi/den`, each correctly rounded.
fn ticks(lo: i32, hi: i32, den: f64) -> Vec<f64> {
    (lo..=hi).map(|i| i as f64 / den).collect()
}

fn decades(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 10f64.powi(e)).collect()
}

impl SearchSpace {
    pub fn new(grids: Vec<Grid>, constraints: Vec<(String, String)>) -> Result<Self> {
        ensure!(!grids.is_empty(), "search space has no keys");
        for (i, g) in grids.iter().enumerate() {
            ensure!(!g.values.is_empty(), "grid `{}` is empty", g.key);
            ensure!(
                g.values.iter().all(|v| v.is_finite()),
                "grid `{}` has non-finite values",
                g.key
            );
            ensure!(
                grids[..i].iter().all(|h| h.key != g.key),
                "duplicate grid key `{}`",
                g.key
            );
        }
        let space = SearchSpace { grids, constraints };
        for (lo, hi) in &space.constraints {
            let (a, b) = (space.grid(lo)?, space.grid(hi)?);
            let min_lo = a.values.iter().copied().fold(f64::INFINITY, f64::min);
            let max_hi = b.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            ensure!(min_lo <= max_hi, "constraint {lo} <= {hi} cannot be satisfied");
        }
        Ok(space)
    }

    /// Learning-rate grid plus the simulator grids for `kind`.
    pub fn for_generator(kind: GeneratorKind) -> Self {
        let g = |key: &str, values: Vec<f64>| Grid {
            key: key.to_string(),
            values,
        };
        let mut grids = vec![g("learning_rate", decades(-5, -1))];
        let mut constraints = Vec::new();
        match kind {
            GeneratorKind::Gbm => {
                grids.push(g("mu", ticks(-5, 5, 20.0)));
                grids.push(g("sigma", ticks(1, 10, 20.0)));
            }
            GeneratorKind::Heston => {
                grids.push(g("kappa", ticks(0, 10, 20.0)));
                grids.push(g("vol", ticks(1, 10, 20.0)));
                grids.push(g("rho", ticks(-20, 20, 20.0)));
            }
            GeneratorKind::Market => {
                grids.push(g("agents_per_step", vec![1.0, 5.0, 10.0]));
                let weights = vec![0.0, 1.0, 3.0, 5.0, 10.0, 30.0, 50.0];
                grids.push(g("w_f", weights.clone()));
                grids.push(g("w_c", weights));
                grids.push(g("sigma_star", decades(-4, -2)));
                grids.push(g("sigma", decades(-5, -2)));
                for (key, hi) in [("tau_star", 5), ("tau", 3)] {
                    grids.push(g(&format!("{key}_min"), decades(0, hi)));
                    grids.push(g(&format!("{key}_max"), decades(0, hi)));
                    constraints.push((format!("{key}_min"), format!("{key}_max")));
                }
                grids.push(g("k_min", ticks(0, 4, 20.0)));
                grids.push(g("k_max", ticks(0, 4, 20.0)));
                constraints.push(("k_min".into(), "k_max".into()));
            }
        }
        SearchSpace::new(grids, constraints).expect("built-in grids are valid")
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.grids.iter().map(|g| g.key.as_str())
    }

    pub fn grids(&self) -> &[Grid] {
        &self.grids
    }

    fn grid(&self, key: &str) -> Result<&Grid> {
        self.grids
            .iter()
            .find(|g| g.key == key)
            .ok_or_else(|| Error::validation(format!("constraint names unknown key `{key}`")))
    }

    pub fn satisfies(&self, a: &Assignment) -> bool {
        self.constraints.iter().all(|(lo, hi)| match (a.get(lo), a.get(hi)) {
            (Some(x), Some(y)) => x <= y,
            _ => false,
        })
    }

    /// Rejection-samples independent per-key draws until the constraints
    /// hold. `weights[k][j]` is the unnormalized probability of value `j` of
    /// key `k`.
    fn draw(&self, weights: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<Assignment> {
        const MAX_REJECTIONS: usize = 10_000;
        for _ in 0..MAX_REJECTIONS {
            let a: Assignment = self
                .grids
                .iter()
                .zip(weights)
                .map(|(g, w)| (g.key.clone(), g.values[pick(w, rng)]))
                .collect();
            if self.satisfies(&a) {
                return Ok(a);
            }
        }
        Err(Error::validation(
            "constraints rejected every sampled assignment; the space is effectively infeasible",
        ))
    }
}

fn pick(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (j, w) in weights.iter().enumerate() {
        if u < *w {
            return j;
        }
        u -= w;
    }
    weights.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Random,
    TpeLike {
        /// Random trials before the model-based sampler starts.
        startup_trials: usize,
        /// Fraction of completed trials treated as "good".
        gamma: f64,
    },
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::TpeLike {
            startup_trials: 20,
            gamma: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Degenerate,
    Failed,
}

impl TrialStatus {
    fn label(&self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::Degenerate => "degenerate",
            TrialStatus::Failed => "failed",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(TrialStatus::Ok),
            "degenerate" => Ok(TrialStatus::Degenerate),
            "failed" => Ok(TrialStatus::Failed),
            other => Err(Error::Format(format!("unknown trial status `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub assignment: Assignment,
    /// Best validation price; `+∞` unless the status is `Ok`.
    pub objective: f64,
    pub status: TrialStatus,
    pub seed: u64,
}

/// Proposes the assignment of trial `index` given the completed history.
pub fn sample_trial(
    space: &SearchSpace,
    strategy: &Strategy,
    history: &[Trial],
    study_seed: u64,
    index: usize,
) -> Result<Assignment> {
    let mut rng = substream(derive_seed(study_seed, index as u64), 0);
    let uniform: Vec<Vec<f64>> = space.grids.iter().map(|g| vec![1.0; g.values.len()]).collect();
    let weights = match *strategy {
        Strategy::Random => uniform,
        Strategy::TpeLike { startup_trials, gamma } => {
            ensure!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
            let mut done: Vec<&Trial> = history
                .iter()
                .filter(|t| t.status == TrialStatus::Ok && t.objective.is_finite())
                .collect();
            if done.len() < startup_trials.max(2) {
                uniform
            } else {
                done.sort_by(|a, b| a.objective.total_cmp(&b.objective).then(a.id.cmp(&b.id)));
                let n_good = ((gamma * done.len() as f64).ceil() as usize).clamp(1, done.len() - 1);
                let (good, bad) = done.split_at(n_good);
                space.grids.iter().map(|g| tpe_weights(g, good, bad)).collect()
            }
        }
    };
    space.draw(&weights, &mut rng)
}

/// Ratio of add-one-smoothed value frequencies among good and bad trials.
fn tpe_weights(grid: &Grid, good: &[&Trial], bad: &[&Trial]) -> Vec<f64> {
    let freq = |set: &[&Trial]| {
        let mut counts = vec![1.0; grid.values.len()];
        for t in set {
            if let Some(v) = t.assignment.get(&grid.key) {
                if let Some(j) = grid.values.iter().position(|x| x == v) {
                    counts[j] += 1.0;
                }
            }
        }
        let total: f64 = counts.iter().sum();
        counts.into_iter().map(move |c| c / total)
    };
    freq(good).zip(freq(bad)).map(|(l, g)| l / g).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub strategy: Strategy,
    pub n_trials: usize,
    pub seed: u64,
    /// Trials proposed and evaluated together; each batch sees the history
    /// completed before it.
    pub workers: usize,
    /// Append-only ledger CSV; an existing ledger is resumed.
    pub ledger: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            strategy: Strategy::default(),
            n_trials: 20,
            seed: 0,
            workers: 1,
            ledger: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    /// Ascending by objective; failed trials last, ties by id.
    pub trials: Vec<Trial>,
}

impl Study {
    pub fn best(&self) -> Option<&Trial> {
        self.trials.first().filter(|t| t.objective.is_finite())
    }
}

/// Runs a study, calling `objective(assignment, trial_seed)` per trial.
/// `Error::Degenerate` marks a trial degenerate and any other error or a
/// non-finite value marks it failed; neither aborts the study.
pub fn run_study<F>(space: &SearchSpace, cfg: &StudyConfig, objective: F) -> Result<Study>
where
    F: Fn(&Assignment, u64) -> Result<f64> + Sync,
{
    ensure!(cfg.workers >= 1, "workers must be >= 1");
    let mut history = match &cfg.ledger {
        Some(path) if path.exists() => read_ledger(path, space)?,
        _ => Vec::new(),
    };
    ensure!(
        history.iter().enumerate().all(|(i, t)| t.id == i),
        "ledger trial ids are not consecutive from 0"
    );
    if let Some(path) = &cfg.ledger {
        if !path.exists() {
            let mut f = std::fs::File::create(path)?;
            writeln!(f, "{}", ledger_header(space))?;
        }
    }
    while history.len() < cfg.n_trials {
        let start = history.len();
        let end = (start + cfg.workers).min(cfg.n_trials);
        let proposals = (start..end)
            .map(|i| sample_trial(space, &cfg.strategy, &history, cfg.seed, i))
            .collect::<Result<Vec<_>>>()?;
        let evaluate = |(offset, assignment): (usize, Assignment)| {
            let id = start + offset;
            let seed = derive_seed(cfg.seed, id as u64);
            let (status, value) = match objective(&assignment, seed) {
                Ok(v) if v.is_finite() => (TrialStatus::Ok, v),
                Ok(v) => {
                    log::warn!("trial {id}: non-finite objective {v}");
                    (TrialStatus::Failed, f64::INFINITY)
                }
                Err(Error::Degenerate(msg)) => {
                    log::warn!("trial {id}: degenerate simulation: {msg}");
                    (TrialStatus::Degenerate, f64::INFINITY)
                }
                Err(e) => {
                    log::warn!("trial {id}: {e}");
                    (TrialStatus::Failed, f64::INFINITY)
                }
            };
            Trial {
                id,
                assignment,
                objective: value,
                status,
                seed,
            }
        };
        let batch: Vec<Trial> = if cfg.workers > 1 {
            proposals.into_par_iter().enumerate().map(evaluate).collect()
        } else {
            proposals.into_iter().enumerate().map(evaluate).collect()
        };
        if let Some(path) = &cfg.ledger {
            append_ledger(path, space, &batch)?;
        }
        history.extend(batch);
    }
    history.truncate(cfg.n_trials);
    Ok(Study {
        trials: rank(history),
    })
}

fn rank(mut trials: Vec<Trial>) -> Vec<Trial> {
    trials.sort_by(|a, b| a.objective.total_cmp(&b.objective).then(a.id.cmp(&b.id)));
    trials
}

fn ledger_header(space: &SearchSpace) -> String {
    let mut cols = vec!["trial_id", "status", "objective", "seed"];
    cols.extend(space.keys());
    cols.join(",")
}

fn append_ledger(path: &Path, space: &SearchSpace, trials: &[Trial]) -> Result<()> {
    let mut f = OpenOptions::new().append(true).open(path)?;
    for t in trials {
        let mut row = format!("{},{},{},{}", t.id, t.status.label(), t.objective, t.seed);
        for key in space.keys() {
            row.push_str(&format!(",{}", t.assignment[key]));
        }
        writeln!(f, "{row}")?;
    }
    f.flush()?;
    Ok(())
}

/// Reads a ledger written for `space`.
pub fn read_ledger(path: &Path, space: &SearchSpace) -> Result<Vec<Trial>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != ledger_header(space) {
        return Err(Error::Format(format!(
            "ledger {} was written for a different search space",
            path.display()
        )));
    }
    let keys: Vec<&str> = space.keys().collect();
    let bad = |line: usize, what: &str| Error::Format(format!("ledger line {line}: {what}"));
    let mut trials = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 + keys.len() {
            return Err(bad(n, "wrong number of fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
        let mut assignment = Assignment::new();
        for (k, v) in keys.iter().zip(&fields[4..]) {
            assignment.insert(k.to_string(), num(v)?);
        }
        trials.push(Trial {
            id: fields[0].parse().map_err(|_| bad(n, "bad trial id"))?,
            status: TrialStatus::parse(fields[1])?,
            objective: num(fields[2])?,
            seed: fields[3].parse().map_err(|_| bad(n, "bad seed"))?,
            assignment,
        });
    }
    Ok(trials)
}

/// `best.json` content for a study.
pub fn best_json(study: &Study) -> serde_json::Value {
    match study.best() {
        Some(t) => serde_json::json!({
            "trial_id": t.id,
            "objective": t.objective,
            "seed": t.seed,
            "assignment": t.assignment,
        }),
        None => serde_json::json!({ "trial_id": null }),
    }
}

/// Trains a hedging policy on paths from an assigned simulator and scores
/// it by the best validation price on a fixed validation set.
#[derive(Debug, Clone)]
pub struct HedgingObjective {
    pub base: Generator,
    pub spec: OptionSpec,
    pub train: TrainConfig,
    pub n_paths: usize,
    pub validation: Vec<PricePath>,
}

impl HedgingObjective {
    /// Applies `assignment` on top of the base generator and training config.
    pub fn configure(&self, a: &Assignment) -> Result<(Generator, TrainConfig)> {
        let get = |k: &str| a.get(k).copied();
        let mut train = self.train;
        if let Some(lr) = get("learning_rate") {
            train.learning_rate = lr;
        }
        let mut generator = self.base.with_horizon(self.spec.maturity_days);
        match &mut generator {
            Generator::Gbm(p) => apply_gbm(p, &get),
            Generator::Heston(p) => apply_heston(p, &get),
            Generator::Market { config, population } => apply_market(config, population, &get)?,
        }
        generator.validate()?;
        train.validate()?;
        Ok((generator, train))
    }

    /// Trains the policy of one trial; deterministic in `(a, seed)`.
    pub fn fit(&self, a: &Assignment, seed: u64) -> Result<(MlpPolicy, TrainReport)> {
        ensure!(!self.validation.is_empty(), "validation set is empty");
        let (generator, mut train_cfg) = self.configure(a)?;
        train_cfg.seed = derive_seed(seed, 1);
        let paths = generator.generate(self.n_paths, derive_seed(seed, 0))?.paths;
        train(&paths, &self.validation, &self.spec, &train_cfg)
    }

    pub fn evaluate(&self, a: &Assignment, seed: u64) -> Result<f64> {
        let (_, report) = self.fit(a, seed)?;
        report
            .best_val_price
            .ok_or_else(|| Error::Numerical("no epoch produced a finite validation price".into()))
    }
}

fn apply_gbm(p: &mut GbmParams, get: &dyn Fn(&str) -> Option<f64>) {
    if let Some(v) = get("mu") {
        p.mu = v;
    }
    if let Some(v) = get("sigma") {
        p.sigma = v;
    }
}

fn apply_heston(p: &mut HestonParams, get: &dyn Fn(&str) -> Option<f64>) {
    if let Some(v) = get("kappa") {
        p.kappa = v;
    }
    if let Some(v) = get("vol") {
        p.theta = v * v;
        p.v0 = v * v;
    }
    if let Some(v) = get("rho") {
        p.rho = v;
    }
}

fn apply_market(
    config: &mut MarketConfig,
    population: &mut PopulationSpec,
    get: &dyn Fn(&str) -> Option<f64>,
) -> Result<()> {
    let count = |k: &str, v: f64| -> Result<u64> {
        ensure!(v >= 0.0 && v.fract() == 0.0, "`{k}` must be a whole number, got {v}");
        Ok(v as u64)
    };
    if let Some(v) = get("agents_per_step") {
        config.agents_per_step = count("agents_per_step", v)? as usize;
    }
    if let Some(v) = get("sigma_star") {
        config.sigma_star = v;
    }
    if let Some(v) = get("sigma") {
        config.sigma = v;
    }
    for (key, slot) in [
        ("w_f", &mut population.w_f),
        ("w_c", &mut population.w_c),
        ("k_min", &mut population.k_min),
        ("k_max", &mut population.k_max),
    ] {
        if let Some(v) = get(key) {
            *slot = v;
        }
    }
    for (key, slot) in [
        ("tau_star_min", &mut population.tau_star_min),
        ("tau_star_max", &mut population.tau_star_max),
        ("tau_min", &mut population.tau_min),
        ("tau_max", &mut population.tau_max),
    ] {
        if let Some(v) = get(key) {
            *slot = count(key, v)?;
        }
    }
    Ok(())
}

/// Untuned reference assignment: training defaults plus the simulator's
/// default parameters (`μ = 0, σ = 0.2` for GBM).
pub fn default_assignment(base: &Generator, train: &TrainConfig) -> Assignment {
    let mut a = Assignment::new();
    a.insert("learning_rate".into(), train.learning_rate);
    match base {
        Generator::Gbm(p) => {
            a.insert("mu".into(), p.mu);
            a.insert("sigma".into(), p.sigma);
        }
        Generator::Heston(p) => {
            a.insert("kappa".into(), p.kappa);
            a.insert("vol".into(), p.v0.sqrt());
            a.insert("rho".into(), p.rho);
        }
        Generator::Market { config, population } => {
            a.insert("agents_per_step".into(), config.agents_per_step as f64);
            a.insert("sigma_star".into(), config.sigma_star);
            a.insert("sigma".into(), config.sigma);
            a.insert("w_f".into(), population.w_f);
            a.insert("w_c".into(), population.w_c);
            a.insert("tau_star_min".into(), population.tau_star_min as f64);
            a.insert("tau_star_max".into(), population.tau_star_max as f64);
            a.insert("tau_min".into(), population.tau_min as f64);
            a.insert("tau_max".into(), population.tau_max as f64);
            a.insert("k_min".into(), population.k_min);
            a.insert("k_max".into(), population.k_max);
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(key: &str, values: &[f64]) -> Grid {
        Grid {
            key: key.into(),
            values: values.to_vec(),
        }
    }

    #[test]
    fn built_in_grids() {
        let gbm = SearchSpace::for_generator(GeneratorKind::Gbm);
        let mu = &gbm.grids()[1].values;
        assert_eq!(mu.len(), 11);
        assert_eq!((mu[0], mu[5], mu[10]), (-0.25, 0.0, 0.25));
        assert!(mu.contains(&0.15));
        assert_eq!(gbm.grids()[0].values, vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1]);
        let heston = SearchSpace::for_generator(GeneratorKind::Heston);
        assert_eq!(heston.grids()[3].values.len(), 41);
        assert_eq!(heston.grids()[1].values.len(), 11);
        let market = SearchSpace::for_generator(GeneratorKind::Market);
        assert_eq!(market.keys().count(), 12);
        let tau_star = &market.grid("tau_star_max").unwrap().values;
        assert_eq!(tau_star, &vec![1.0, 10.0, 100.0, 1e3, 1e4, 1e5]);
        assert_eq!(market.grid("k_max").unwrap().values, vec![0.0, 0.05, 0.1, 0.15, 0.2]);
    }

    #[test]
    fn singleton_space_always_returns_its_point() {
        let space = SearchSpace::new(vec![grid("a", &[1.5]), grid("b", &[2.0])], vec![]).unwrap();
        for i in 0..20 {
            let a = sample_trial(&space, &Strategy::Random, &[], 3, i).unwrap();
            assert_eq!(a["a"], 1.5);
            assert_eq!(a["b"], 2.0);
        }
    }

    #[test]
    fn infeasible_and_malformed_spaces() {
        let c = vec![("a".to_string(), "b".to_string())];
        assert!(SearchSpace::new(vec![grid("a", &[5.0]), grid("b", &[1.0, 2.0])], c.clone()).is_err());
        assert!(SearchSpace::new(vec![grid("a", &[]), grid("b", &[1.0])], vec![]).is_err());
        assert!(SearchSpace::new(vec![grid("a", &[1.0]), grid("a", &[1.0])], vec![]).is_err());
        let unknown = vec![("a".to_string(), "zzz".to_string())];
        assert!(SearchSpace::new(vec![grid("a", &[1.0])], unknown).is_err());
    }

    #[test]
    fn constrained_draws_respect_ordering() {
        let space = SearchSpace::for_generator(GeneratorKind::Market);
        for i in 0..10_000 {
            let a = sample_trial(&space, &Strategy::Random, &[], 1, i).unwrap();
            assert!(a["tau_min"] <= a["tau_max"]);
            assert!(a["tau_star_min"] <= a["tau_star_max"]);
            assert!(a["k_min"] <= a["k_max"]);
        }
    }

    fn synthetic_history(space: &SearchSpace, n: usize) -> Vec<Trial> {
        // Objective is lowest when sigma = 0.05.
        (0..n)
            .map(|i| {
                let a = sample_trial(space, &Strategy::Random, &[], 77, i).unwrap();
                let objective = (a["sigma"] - 0.05).abs() + 0.001 * a["mu"].abs();
                Trial {
                    id: i,
                    assignment: a,
                    objective,
                    status: TrialStatus::Ok,
                    seed: i as u64,
                }
            })
            .collect()
    }

    #[test]
    fn tpe_favours_values_of_good_trials() {
        let space = SearchSpace::for_generator(GeneratorKind::Gbm);
        let history = synthetic_history(&space, 100);
        let strategy = Strategy::default();
        let hits = (0..100)
            .filter(|&i| sample_trial(&space, &strategy, &history, 5, 100 + i).unwrap()["sigma"] == 0.05)
            .count();
        // Uniform rate is 1 in 10.
        assert!(hits > 20, "sigma=0.05 drawn {hits} times in 100");
    }

    #[test]
    fn tpe_is_random_during_warm_up() {
        let space = SearchSpace::for_generator(GeneratorKind::Gbm);
        let history = synthetic_history(&space, 10);
        for i in 0..10 {
            assert_eq!(
                sample_trial(&space, &Strategy::default(), &history, 5, i).unwrap(),
                sample_trial(&space, &Strategy::Random, &[], 5, i).unwrap()
            );
        }
    }

    fn toy_objective(a: &Assignment, seed: u64) -> Result<f64> {
        if a["x"] == 3.0 {
            return Err(Error::Degenerate("x = 3".into()));
        }
        if a["x"] == 4.0 {
            return Ok(f64::NAN);
        }
        Ok((a["x"] - 1.0).powi(2) + (seed % 7) as f64 * 1e-3)
    }

    fn toy_space() -> SearchSpace {
        SearchSpace::new(
            vec![grid("x", &[0.0, 1.0, 2.0, 3.0, 4.0]), grid("y", &[0.5, 1.5])],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn failures_rank_last_and_do_not_abort() {
        let cfg = StudyConfig {
            n_trials: 30,
            seed: 9,
            ..StudyConfig::default()
        };
        let study = run_study(&toy_space(), &cfg, toy_objective).unwrap();
        assert_eq!(study.trials.len(), 30);
        let first_bad = study.trials.iter().position(|t| t.status != TrialStatus::Ok);
        if let Some(k) = first_bad {
            assert!(study.trials[k..].iter().all(|t| t.status != TrialStatus::Ok));
            assert!(study.trials[k..].iter().all(|t| t.objective == f64::INFINITY));
        }
        assert!(study.trials.iter().any(|t| t.status == TrialStatus::Degenerate));
        assert!(study.trials.windows(2).all(|w| w[0].objective <= w[1].objective));
        assert_eq!(study.best().unwrap().assignment["x"], 1.0);
    }

    #[test]
    fn single_trial_study() {
        let cfg = StudyConfig {
            n_trials: 1,
            ..StudyConfig::default()
        };
        let study = run_study(&toy_space(), &cfg, |_, _| Ok(0.25)).unwrap();
        assert_eq!(study.trials.len(), 1);
        assert_eq!(study.best().unwrap().objective, 0.25);
    }

    #[test]
    fn studies_are_deterministic_and_worker_count_only_batches() {
        let cfg = StudyConfig {
            n_trials: 40,
            seed: 4,
            ..StudyConfig::default()
        };
        let a = run_study(&toy_space(), &cfg, toy_objective).unwrap();
        let b = run_study(&toy_space(), &cfg, toy_objective).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let par = StudyConfig { workers: 3, ..cfg.clone() };
        let c = run_study(&toy_space(), &par, toy_objective).unwrap();
        let d = run_study(&toy_space(), &par, toy_objective).unwrap();
        assert_eq!(format!("{c:?}"), format!("{d:?}"));
    }

    #[test]
    fn ledger_resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let full_path = dir.path().join("full.csv");
        let part_path = dir.path().join("part.csv");
        let full_cfg = StudyConfig {
            n_trials: 30,
            seed: 2,
            ledger: Some(full_path.clone()),
            ..StudyConfig::default()
        };
        let full = run_study(&toy_space(), &full_cfg, toy_objective).unwrap();

        let first = StudyConfig {
            n_trials: 12,
            ledger: Some(part_path.clone()),
            ..full_cfg.clone()
        };
        run_study(&toy_space(), &first, toy_objective).unwrap();
        let rest = StudyConfig {
            n_trials: 30,
            ledger: Some(part_path.clone()),
            ..full_cfg
        };
        let resumed = run_study(&toy_space(), &rest, toy_objective).unwrap();
        assert_eq!(format!("{full:?}"), format!("{resumed:?}"));
        assert_eq!(
            std::fs::read_to_string(&full_path).unwrap(),
            std::fs::read_to_string(&part_path).unwrap()
        );

        let other = SearchSpace::new(vec![grid("z", &[1.0])], vec![]).unwrap();
        assert!(matches!(read_ledger(&full_path, &other), Err(Error::Format(_))));
    }

    #[test]
    fn best_json_shape() {
        let study = run_study(&toy_space(), &StudyConfig::default(), toy_objective).unwrap();
        let v = best_json(&study);
        assert_eq!(v["trial_id"], serde_json::json!(study.best().unwrap().id));
        assert!(v["assignment"]["x"].is_number());
    }

    #[test]
    fn assignments_map_onto_simulators() {
        let objective = HedgingObjective {
            base: Generator::Market {
                config: MarketConfig::default(),
                population: PopulationSpec::default(),
            },
            spec: OptionSpec::default(),
            train: TrainConfig::default(),
            n_paths: 1,
            validation: vec![],
        };
        let mut a = default_assignment(&objective.base, &objective.train);
        a.insert("tau_max".into(), 1000.0);
        a.insert("learning_rate".into(), 0.1);
        let (g, t) = objective.configure(&a).unwrap();
        assert_eq!(t.learning_rate, 0.1);
        match g {
            Generator::Market { population, .. } => assert_eq!(population.tau_max, 1000),
            _ => unreachable!(),
        }
        a.insert("tau_max".into(), 2.5);
        assert!(objective.configure(&a).unwrap_err().is_validation());

        let heston = HedgingObjective {
            base: Generator::Heston(HestonParams::default()),
            ..objective
        };
        let mut a = Assignment::new();
        a.insert("vol".into(), 0.3);
        match heston.configure(&a).unwrap().0 {
            Generator::Heston(p) => {
                assert!((p.theta - 0.09).abs() < 1e-15 && p.v0 == p.theta);
                assert_eq!(p.n_steps, 20);
            }
            _ => unreachable!(),
        }
    }
}
