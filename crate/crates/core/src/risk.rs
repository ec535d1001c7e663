//! Empirical risk measures, oriented as utilities (higher is better), and
//! indifference pricing.
//!
//! Both measures are cash-invariant, `u(x + p) = u(x) + p`, so the
//! indifference equation `u(PL + p) = u(0) = 0` has the closed-form root
//! `p = -u(PL)`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskMeasure {
    /// Entropic risk measure with risk aversion `lambda`.
    Erm { lambda: f64 },
    /// Lower-tail expectation at confidence `alpha`.
    Cvar { alpha: f64 },
}

impl RiskMeasure {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RiskMeasure::Erm { lambda } => {
                ensure!(lambda.is_finite() && lambda > 0.0, "ERM lambda must be > 0, got {lambda}")
            }
            RiskMeasure::Cvar { alpha } => {
                ensure!((0.0..1.0).contains(&alpha), "CVaR alpha must lie in [0, 1), got {alpha}")
            }
        }
        Ok(())
    }

    /// Short label such as `ERM(1)` or `CVaR(0.95)`.
    pub fn label(&self) -> String {
        match *self {
            RiskMeasure::Erm { lambda } => format!("ERM({lambda})"),
            RiskMeasure::Cvar { alpha } => format!("CVaR({alpha})"),
        }
    }

    pub fn utility(&self, samples: &[f64]) -> Result<f64> {
        match *self {
            RiskMeasure::Erm { lambda } => erm(samples, lambda),
            RiskMeasure::Cvar { alpha } => cvar(samples, alpha),
        }
    }

    /// Utility together with `∂u/∂x_j` for every sample.
    pub fn utility_with_grad(&self, samples: &[f64]) -> Result<(f64, Vec<f64>)> {
        match *self {
            RiskMeasure::Erm { lambda } => erm_with_grad(samples, lambda),
            RiskMeasure::Cvar { alpha } => cvar_with_grad(samples, alpha),
        }
    }
}

/// `u = -(1/λ) log mean exp(-λ x)`, evaluated with a max shift.
pub fn erm(samples: &[f64], lambda: f64) -> Result<f64> {
    erm_with_grad(samples, lambda).map(|(u, _)| u)
}

pub fn erm_with_grad(samples: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    ensure!(!samples.is_empty(), "ERM of an empty sample");
    RiskMeasure::Erm { lambda }.validate()?;
    let shift = samples
        .iter()
        .map(|x| -lambda * x)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = samples.iter().map(|x| (-lambda * x - shift).exp()).collect();
    let total: f64 = weights.iter().sum();
    let m = samples.len() as f64;
    let log_mean_exp = shift + (total / m).ln();
    let u = -log_mean_exp / lambda;
    // du/dx_j is the softmax weight of -λ x_j.
    let grad = weights.into_iter().map(|w| w / total).collect();
    Ok((u, grad))
}

/// Number of samples in the empirical lower tail, `⌈(1-α)m⌉`.
pub fn cvar_tail_len(m: usize, alpha: f64) -> usize {
    let raw = (1.0 - alpha) * m as f64;
    // Guard against representation error pushing e.g. 2.0000000000000004 up to 3.
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Mean of the `⌈(1-α)m⌉` smallest samples; ties go to the lower index.
pub fn cvar(samples: &[f64], alpha: f64) -> Result<f64> {
    cvar_with_grad(samples, alpha).map(|(u, _)| u)
}

pub fn cvar_with_grad(samples: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    ensure!(!samples.is_empty(), "CVaR of an empty sample");
    RiskMeasure::Cvar { alpha }.validate()?;
    let tail = cvar_tail_len(samples.len(), alpha);
    ensure!(tail >= 1, "CVaR tail is empty for m={} alpha={alpha}", samples.len());
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::Numerical("NaN sample in CVaR".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    // Stable sort keeps index order among ties.
    order.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]));
    let weight = 1.0 / tail as f64;
    let mut grad = vec![0.0; samples.len()];
    let mut sum = 0.0;
    for &j in &order[..tail] {
        sum += samples[j];
        grad[j] = weight;
    }
    Ok((sum / tail as f64, grad))
}

/// Solves `u(PL + p) = 0` for the price `p`.
pub fn indifference_price(pl: &[f64], measure: &RiskMeasure) -> Result<f64> {
    let price = -measure.utility(pl)?;
    let shifted: Vec<f64> = pl.iter().map(|x| x + price).collect();
    let residual = measure.utility(&shifted)?;
    let scale = price.abs().max(pl.iter().fold(0.0f64, |a, x| a.max(x.abs()))).max(1.0);
    if !residual.is_finite() || residual.abs() > 1e-9 * scale {
        return Err(Error::Numerical(format!(
            "indifference equation residual {residual:e} at price {price}"
        )));
    }
    Ok(price)
}
