//! Classical path generators: Euler-stepped geometric Brownian motion and
//! the Heston model under the quadratic-exponential scheme with martingale
//! correction (Andersen 2008).
//!
//! Every path draws from its own `(seed, path index)` substream, so output
//! is independent of thread scheduling.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::paths::{substream, PricePath};

pub const DEFAULT_DT: f64 = 1.0 / 250.0;

/// QE switching threshold on `ψ = s²/m²`.
const PSI_CRITICAL: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmParams {
    /// Annualized drift.
    pub mu: f64,
    /// Annualized volatility.
    pub sigma: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            mu: 0.0,
            sigma: 0.2,
            dt: DEFAULT_DT,
            n_steps: 20,
        }
    }
}

impl GbmParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.sigma.is_finite() && self.sigma >= 0.0, "GBM sigma must be >= 0");
        ensure!(self.mu.is_finite(), "GBM mu must be finite");
        ensure!(self.dt.is_finite() && self.dt > 0.0, "dt must be > 0");
        ensure!(self.n_steps >= 1, "n_steps must be >= 1");
        Ok(())
    }
}

/// A generated batch plus the number of regenerated paths.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub paths: Vec<PricePath>,
    pub rejected: u64,
}

/// `S_{i+1} = S_i (1 + μ dt + σ √dt ε_i)`; paths touching zero are redrawn.
pub fn gbm_paths(params: &GbmParams, n_paths: usize, seed: u64) -> Result<PathBatch> {
    params.validate()?;
    let drift = params.mu * params.dt;
    let diffusion = params.sigma * params.dt.sqrt();
    let results: Vec<(Vec<f64>, u64)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = substream(seed, p as u64);
            let mut rejected = 0;
            loop {
                let mut s = Vec::with_capacity(params.n_steps + 1);
                s.push(1.0);
                let mut cur = 1.0f64;
                let mut ok = true;
                for _ in 0..params.n_steps {
                    let eps: f64 = rng.sample(StandardNormal);
                    cur *= 1.0 + drift + diffusion * eps;
                    if cur <= 0.0 {
                        ok = false;
                        break;
                    }
                    s.push(cur);
                }
                if ok {
                    return (s, rejected);
                }
                rejected += 1;
            }
        })
        .collect();
    Ok(collect_batch(results))
}

fn collect_batch(results: Vec<(Vec<f64>, u64)>) -> PathBatch {
    let rejected = results.iter().map(|r| r.1).sum();
    PathBatch {
        paths: results
            .into_iter()
            .map(|(s, _)| PricePath::from_vec_unchecked(s))
            .collect(),
        rejected,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HestonParams {
    /// Mean-reversion speed of the variance.
    pub kappa: f64,
    /// Long-run variance.
    pub theta: f64,
    /// Initial variance.
    pub v0: f64,
    pub vol_of_vol: f64,
    pub rho: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl Default for HestonParams {
    fn default() -> Self {
        HestonParams {
            kappa: 1.0,
            theta: 0.04,
            v0: 0.04,
            vol_of_vol: 0.2,
            rho: -0.7,
            dt: DEFAULT_DT,
            n_steps: 20,
        }
    }
}

impl HestonParams {
    /// Parameterization used by the tuning grid: `σ = √θ = √V_0`.
    pub fn with_initial_vol(kappa: f64, vol: f64, rho: f64) -> Self {
        HestonParams {
            kappa,
            theta: vol * vol,
            v0: vol * vol,
            rho,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.kappa.is_finite() && self.kappa >= 0.0, "Heston kappa must be >= 0");
        ensure!(self.theta.is_finite() && self.theta > 0.0, "Heston theta must be > 0");
        ensure!(self.v0.is_finite() && self.v0 > 0.0, "Heston v0 must be > 0");
        ensure!(
            self.vol_of_vol.is_finite() && self.vol_of_vol >= 0.0,
            "Heston vol of vol must be >= 0"
        );
        ensure!((-1.0..=1.0).contains(&self.rho), "Heston rho must lie in [-1, 1]");
        ensure!(self.dt.is_finite() && self.dt > 0.0, "dt must be > 0");
        ensure!(self.n_steps >= 1, "n_steps must be >= 1");
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    /// `E[V_T] = θ + (V_0 - θ) e^{-κT}`.
    pub fn expected_terminal_variance(&self) -> f64 {
        self.theta + (self.v0 - self.theta) * (-self.kappa * self.horizon()).exp()
    }
}

/// Heston paths; returns prices and, per path, the variance trajectory.
#[derive(Debug, Clone)]
pub struct HestonBatch {
    pub paths: Vec<PricePath>,
    pub variances: Vec<Vec<f64>>,
}

pub fn heston_paths(params: &HestonParams, n_paths: usize, seed: u64) -> Result<PathBatch> {
    let batch = heston_paths_with_variance(params, n_paths, seed)?;
    Ok(PathBatch {
        paths: batch.paths,
        rejected: 0,
    })
}

pub fn heston_paths_with_variance(params: &HestonParams, n_paths: usize, seed: u64) -> Result<HestonBatch> {
    params.validate()?;
    let stepper = QeStepper::new(params);
    let (paths, variances) = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = substream(seed, p as u64);
            let mut s = Vec::with_capacity(params.n_steps + 1);
            let mut v = Vec::with_capacity(params.n_steps + 1);
            let mut log_s = 0.0f64;
            let mut var = params.v0;
            s.push(1.0);
            v.push(var);
            for _ in 0..params.n_steps {
                let (next_var, dlog) = stepper.step(var, &mut rng);
                log_s += dlog;
                var = next_var;
                s.push(log_s.exp());
                v.push(var);
            }
            (PricePath::from_vec_unchecked(s), v)
        })
        .unzip();
    Ok(HestonBatch { paths, variances })
}

/// Precomputed constants of one QE-M step.
struct QeStepper {
    kappa: f64,
    theta: f64,
    sigma: f64,
    dt: f64,
    decay: f64,
    /// `(1 - e^{-κΔ}) / κ`, which tends to `Δ` as `κ → 0`.
    one_minus_decay_over_kappa: f64,
    k0: f64,
    k1: f64,
    k2: f64,
    k3: f64,
    k4: f64,
}

impl QeStepper {
    fn new(p: &HestonParams) -> Self {
        let dt = p.dt;
        let decay = (-p.kappa * dt).exp();
        let one_minus_decay_over_kappa = if p.kappa * dt < 1e-12 {
            dt
        } else {
            -(-p.kappa * dt).exp_m1() / p.kappa
        };
        // Central discretization weights γ1 = γ2 = 1/2.
        let (g1, g2) = (0.5, 0.5);
        let sigma = p.vol_of_vol;
        let (k0, k1, k2) = if sigma > 0.0 {
            let r = p.rho / sigma;
            (
                -r * p.kappa * p.theta * dt,
                g1 * dt * (p.kappa * r - 0.5) - r,
                g2 * dt * (p.kappa * r - 0.5) + r,
            )
        } else {
            (0.0, -g1 * dt * 0.5, -g2 * dt * 0.5)
        };
        let one_minus_rho2 = (1.0 - p.rho * p.rho).max(0.0);
        QeStepper {
            kappa: p.kappa,
            theta: p.theta,
            sigma,
            dt,
            decay,
            one_minus_decay_over_kappa,
            k0,
            k1,
            k2,
            k3: g1 * dt * one_minus_rho2,
            k4: g2 * dt * one_minus_rho2,
        }
    }

    /// Advances `(V, ln S)` by one step, returning `(V', Δ ln S)`.
    fn step<R: Rng>(&self, var: f64, rng: &mut R) -> (f64, f64) {
        let m = self.theta + (var - self.theta) * self.decay;
        if self.sigma == 0.0 {
            // Deterministic variance: integrate the lognormal step exactly on
            // the trapezoid average so the price stays a martingale.
            let avg = 0.5 * (var + m);
            let z: f64 = rng.sample(StandardNormal);
            return (m, -0.5 * avg * self.dt + (avg * self.dt).sqrt() * z);
        }
        // s² = Vσ²e^{-κΔ}q + θσ²κq²/2 with q = (1 - e^{-κΔ})/κ.
        let q = self.one_minus_decay_over_kappa;
        let sigma2 = self.sigma * self.sigma;
        let s2 = var * sigma2 * self.decay * q + 0.5 * self.theta * sigma2 * self.kappa * q * q;
        if m <= f64::MIN_POSITIVE {
            // Absorbed at zero (only reachable with κ = 0).
            return (0.0, self.k0);
        }
        let psi = s2 / (m * m);
        let a_coef = self.k2 + 0.5 * self.k4;

        let (next_var, k0_star) = if psi <= PSI_CRITICAL {
            let inv = 2.0 / psi;
            let b2 = inv - 1.0 + (inv * (inv - 1.0)).sqrt();
            let b = b2.sqrt();
            let a = m / (1.0 + b2);
            let zv: f64 = rng.sample(StandardNormal);
            let next = a * (b + zv) * (b + zv);
            let k0_star = if a_coef < 1.0 / (2.0 * a) {
                -a_coef * b2 * a / (1.0 - 2.0 * a_coef * a) + 0.5 * (1.0 - 2.0 * a_coef * a).ln()
                    - (self.k1 + 0.5 * self.k3) * var
            } else {
                self.k0
            };
            (next, k0_star)
        } else {
            let p = (psi - 1.0) / (psi + 1.0);
            let beta = (1.0 - p) / m;
            let u: f64 = rng.random();
            let next = if u <= p {
                0.0
            } else {
                ((1.0 - p) / (1.0 - u)).ln() / beta
            };
            let k0_star = if a_coef < beta {
                -(p + beta * (1.0 - p) / (beta - a_coef)).ln() - (self.k1 + 0.5 * self.k3) * var
            } else {
                self.k0
            };
            (next, k0_star)
        };
        let z: f64 = rng.sample(StandardNormal);
        let dlog = k0_star
            + self.k1 * var
            + self.k2 * next_var
            + (self.k3 * var + self.k4 * next_var).max(0.0).sqrt() * z;
        (next_var, dlog)
    }
}
