//! Option payoffs and zero-rate Black–Scholes analytics.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{ensure, Result};
use crate::paths::PricePath;

/// Trading days per year used to convert day counts into year fractions.
pub const TRADING_DAYS_PER_YEAR: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    EuropeanCall,
    LookbackCall,
}

impl OptionKind {
    pub fn label(&self) -> &'static str {
        match self {
            OptionKind::EuropeanCall => "european",
            OptionKind::LookbackCall => "lookback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptionSpec {
    pub kind: OptionKind,
    pub strike: f64,
    pub maturity_days: usize,
}

impl Default for OptionSpec {
    fn default() -> Self {
        OptionSpec {
            kind: OptionKind::EuropeanCall,
            strike: 1.0,
            maturity_days: 20,
        }
    }
}

impl OptionSpec {
    pub fn european(strike: f64, maturity_days: usize) -> Self {
        OptionSpec {
            kind: OptionKind::EuropeanCall,
            strike,
            maturity_days,
        }
    }

    pub fn lookback(strike: f64, maturity_days: usize) -> Self {
        OptionSpec {
            kind: OptionKind::LookbackCall,
            strike,
            maturity_days,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.strike.is_finite() && self.strike > 0.0,
            "strike must be positive, got {}",
            self.strike
        );
        ensure!(self.maturity_days >= 1, "maturity must be at least one day");
        Ok(())
    }

    pub fn is_lookback(&self) -> bool {
        self.kind == OptionKind::LookbackCall
    }

    /// Payoff on the daily sampling grid `t_0..t_n`.
    pub fn payoff(&self, path: &PricePath) -> Result<f64> {
        self.validate()?;
        ensure!(
            path.len() == self.maturity_days + 1,
            "path has {} points, option needs {}",
            path.len(),
            self.maturity_days + 1
        );
        Ok(self.payoff_unchecked(path.prices()))
    }

    pub(crate) fn payoff_unchecked(&self, prices: &[f64]) -> f64 {
        let reference = match self.kind {
            OptionKind::EuropeanCall => *prices.last().expect("nonempty path"),
            OptionKind::LookbackCall => prices.iter().copied().fold(f64::MIN, f64::max),
        };
        (reference - self.strike).max(0.0)
    }
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn d1(spot: f64, strike: f64, vol: f64, tau: f64) -> f64 {
    ((spot / strike).ln() + 0.5 * vol * vol * tau) / (vol * tau.sqrt())
}

/// Zero-rate Black–Scholes call price. `tau <= 0` or `vol <= 0` collapse to
/// the intrinsic value.
pub fn bs_price(spot: f64, strike: f64, vol: f64, tau_years: f64) -> f64 {
    if spot <= 0.0 {
        return 0.0;
    }
    if tau_years <= 0.0 || vol <= 0.0 {
        return (spot - strike).max(0.0);
    }
    let d1 = d1(spot, strike, vol, tau_years);
    let d2 = d1 - vol * tau_years.sqrt();
    spot * norm_cdf(d1) - strike * norm_cdf(d2)
}

/// Zero-rate Black–Scholes call delta `Φ(d1)`, with the indicator limit at
/// expiry (`1` strictly in the money, `1/2` at the money, else `0`).
pub fn bs_delta(spot: f64, strike: f64, vol: f64, tau_years: f64) -> f64 {
    if spot <= 0.0 {
        return 0.0;
    }
    if tau_years <= 0.0 || vol <= 0.0 {
        return match spot.partial_cmp(&strike) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        };
    }
    norm_cdf(d1(spot, strike, vol, tau_years))
}
