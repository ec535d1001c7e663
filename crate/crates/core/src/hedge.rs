//! Hedging P&L accounting, policy features and the Black–Scholes delta
//! baseline.
//!
//! For a short option hedged with positions `δ_0..δ_{n-1}`:
//!
//! ```text
//! PL   = -Z(S) + Σ_{i<n} δ_i (S_{i+1} - S_i) - C
//! C    = Σ_{i=0..n} c S_i |δ_i - δ_{i-1}|,   δ_{-1} = δ_n = 0
//! ```

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::instruments::{bs_delta, OptionSpec, TRADING_DAYS_PER_YEAR};
use crate::paths::PricePath;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeOutcome {
    pub pl: f64,
    pub trading_gain: f64,
    pub cost: f64,
    pub payoff: f64,
}

/// Computes the P&L decomposition. `deltas` has one entry per hedging
/// interval (`path.len() - 1`).
pub fn compute_pl(
    path: &PricePath,
    deltas: &[f64],
    spec: &OptionSpec,
    cost_rate: f64,
) -> Result<HedgeOutcome> {
    ensure!(
        deltas.len() == path.steps(),
        "{} positions for a path with {} steps",
        deltas.len(),
        path.steps()
    );
    ensure!(
        cost_rate >= 0.0 && cost_rate.is_finite(),
        "transaction cost must be nonnegative"
    );
    let payoff = spec.payoff(path)?;
    Ok(pl_unchecked(path.prices(), deltas, payoff, cost_rate))
}

pub(crate) fn pl_unchecked(prices: &[f64], deltas: &[f64], payoff: f64, cost_rate: f64) -> HedgeOutcome {
    let n = deltas.len();
    let mut trading_gain = 0.0;
    for i in 0..n {
        trading_gain += deltas[i] * (prices[i + 1] - prices[i]);
    }
    let mut cost = 0.0;
    if cost_rate > 0.0 {
        let mut prev = 0.0;
        for i in 0..=n {
            let cur = if i < n { deltas[i] } else { 0.0 };
            cost += cost_rate * prices[i] * (cur - prev).abs();
            prev = cur;
        }
    }
    HedgeOutcome {
        pl: -payoff + trading_gain - cost,
        trading_gain,
        cost,
        payoff,
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `∂PL/∂δ_i` for every position, using `sign(0) = 0` at the cost kink.
pub fn pl_gradient(prices: &[f64], deltas: &[f64], cost_rate: f64) -> Vec<f64> {
    let n = deltas.len();
    let at = |i: usize| if i < n { deltas[i] } else { 0.0 };
    (0..n)
        .map(|i| {
            let gain = prices[i + 1] - prices[i];
            let prev = if i == 0 { 0.0 } else { deltas[i - 1] };
            // δ_i enters |δ_i - δ_{i-1}| at S_i and |δ_{i+1} - δ_i| at S_{i+1}.
            let cost = cost_rate
                * (prices[i] * sign(deltas[i] - prev) - prices[i + 1] * sign(at(i + 1) - deltas[i]));
            gain - cost
        })
        .collect()
}

/// Outcome rows as `path_id,payoff,gain,cost,pl`.
pub fn write_outcomes_csv<W: Write>(mut out: W, outcomes: &[HedgeOutcome]) -> std::io::Result<()> {
    writeln!(out, "path_id,payoff,gain,cost,pl")?;
    for (id, o) in outcomes.iter().enumerate() {
        writeln!(out, "{id},{},{},{},{}", o.payoff, o.trading_gain, o.cost, o.pl)?;
    }
    Ok(())
}

/// Trailing realized-volatility estimator for the volatility feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VolEstimator {
    /// Volatility assumed before any return is observed.
    pub prior: f64,
    /// Below this many returns the estimate is blended linearly with the prior.
    pub min_returns: usize,
    pub floor: f64,
}

impl Default for VolEstimator {
    fn default() -> Self {
        VolEstimator {
            prior: 0.2,
            min_returns: 5,
            floor: 1e-4,
        }
    }
}

impl VolEstimator {
    /// Annualized volatility from the log-returns of `prefix`.
    pub fn estimate(&self, prefix: &[f64]) -> f64 {
        let k = prefix.len().saturating_sub(1);
        let returns = prefix.windows(2).map(|w| (w[1] / w[0]).ln());
        let realized = if k == 0 {
            0.0
        } else {
            let mean = returns.clone().sum::<f64>() / k as f64;
            let ss: f64 = returns.map(|r| (r - mean) * (r - mean)).sum();
            let dof = if k >= self.min_returns && k > 1 { k - 1 } else { k };
            (ss / dof as f64).sqrt() * TRADING_DAYS_PER_YEAR.sqrt()
        };
        let vol = if k >= self.min_returns {
            realized
        } else {
            let w = k as f64 / self.min_returns as f64;
            w * realized + (1.0 - w) * self.prior
        };
        vol.max(self.floor)
    }
}

/// Policy inputs at one hedging date.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRow {
    pub moneyness: f64,
    pub time_to_maturity: f64,
    pub volatility: f64,
    pub bs_delta: f64,
    /// Running maximum of `S/K`; present only for lookback options.
    pub max_moneyness: Option<f64>,
}

impl FeatureRow {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.moneyness, self.time_to_maturity, self.volatility, self.bs_delta];
        if let Some(m) = self.max_moneyness {
            v.push(m);
        }
        v
    }
}

pub fn feature_width(spec: &OptionSpec) -> usize {
    if spec.is_lookback() {
        5
    } else {
        4
    }
}

/// Features from the observed prefix `S_{t_0..t_i}` (`i = prefix.len() - 1`).
pub fn features(prefix: &[f64], spec: &OptionSpec, vol: &VolEstimator) -> Result<FeatureRow> {
    ensure!(!prefix.is_empty(), "feature prefix is empty");
    let i = prefix.len() - 1;
    ensure!(
        i < spec.maturity_days,
        "feature date {i} is not before maturity {}",
        spec.maturity_days
    );
    let spot = prefix[i];
    let tau = (spec.maturity_days - i) as f64 / TRADING_DAYS_PER_YEAR;
    let volatility = vol.estimate(prefix);
    Ok(FeatureRow {
        moneyness: spot / spec.strike,
        time_to_maturity: tau,
        volatility,
        bs_delta: bs_delta(spot, spec.strike, volatility, tau),
        max_moneyness: spec
            .is_lookback()
            .then(|| prefix.iter().copied().fold(f64::MIN, f64::max) / spec.strike),
    })
}

/// Row-major feature matrix of shape `(paths × n, width)`, row `p * n + i`
/// holding date `i` of path `p`.
pub fn feature_matrix(paths: &[PricePath], spec: &OptionSpec, vol: &VolEstimator) -> Result<Vec<f64>> {
    let n = spec.maturity_days;
    let width = feature_width(spec);
    let mut out = Vec::with_capacity(paths.len() * n * width);
    for path in paths {
        ensure!(
            path.len() == n + 1,
            "path has {} points, option needs {}",
            path.len(),
            n + 1
        );
        for i in 0..n {
            out.extend(features(&path.prices()[..=i], spec, vol)?.to_vec());
        }
    }
    Ok(out)
}

/// Black–Scholes delta at every hedging date with a fixed volatility. The
/// European delta is used for lookbacks too, as a naive baseline.
pub fn delta_hedge_baseline(path: &PricePath, spec: &OptionSpec, vol: f64) -> Result<Vec<f64>> {
    spec.validate()?;
    ensure!(
        path.len() == spec.maturity_days + 1,
        "path has {} points, option needs {}",
        path.len(),
        spec.maturity_days + 1
    );
    let n = spec.maturity_days;
    Ok((0..n)
        .map(|i| {
            let tau = (n - i) as f64 / TRADING_DAYS_PER_YEAR;
            bs_delta(path.prices()[i], spec.strike, vol, tau)
        })
        .collect())
}
