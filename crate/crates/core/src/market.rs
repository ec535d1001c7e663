//! FCN (fundamental / chartist / noise) trader agents and the session runner
//! that turns their orders into auction activity and price paths.
//!
//! Each agent combines three signals into an expected return
//!
//! ```text
//! F = ln(p*_t / p_t) / τ*        mean reversion to the fundamental
//! C = mean of the last τ log-returns
//! N ~ Normal(0, σ²)
//! r̂ = (w_F F + w_C C + w_N N) / (w_F + w_C + w_N),   p̂ = p_t exp(r̂ τ)
//! ```
//!
//! and places a one-unit bid below `p̂` (or an ask above it) offset by its
//! margin `k`.

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::lob::{Fill, Mode, Order, OrderBook, Side};
use crate::paths::{derive_seed, substream, PricePath};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcnAgent {
    pub w_f: f64,
    pub w_c: f64,
    pub w_n: f64,
    /// Mean-reversion time constant τ*, in steps.
    pub tau_star: u64,
    /// Chart window τ, in steps.
    pub tau: u64,
    pub margin: f64,
}

impl FcnAgent {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.w_f >= 0.0 && self.w_c >= 0.0 && self.w_n >= 0.0,
            "agent weights must be nonnegative"
        );
        ensure!(self.w_f + self.w_c + self.w_n > 0.0, "agent weights sum to zero");
        ensure!(self.tau_star >= 1 && self.tau >= 1, "agent time constants must be >= 1");
        ensure!((0.0..=1.0).contains(&self.margin), "agent margin must lie in [0, 1]");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factors {
    pub fundamental: f64,
    pub chartist: f64,
    pub noise: f64,
}

/// Computes the three factors at the current price `price`. `log_history`
/// holds `ln p_s` for the steps before now (oldest first); when it is shorter
/// than `τ + 1` the chart window is truncated to what is available.
pub fn compute_factors<R: Rng>(
    agent: &FcnAgent,
    log_history: &[f64],
    price: f64,
    fundamental: f64,
    noise_std: f64,
    rng: &mut R,
) -> Factors {
    let f = (fundamental / price).ln() / agent.tau_star as f64;
    let c = match log_history.len() {
        0 | 1 => 0.0,
        len => {
            let window = (agent.tau as usize).min(len - 1);
            // Sum of consecutive log-returns telescopes to an endpoint difference.
            (log_history[len - 1] - log_history[len - 1 - window]) / window as f64
        }
    };
    let z: f64 = rng.sample(StandardNormal);
    Factors {
        fundamental: f,
        chartist: c,
        noise: noise_std * z,
    }
}

/// Which best quote caps an agent's limit price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuoteCap {
    /// Bid at `min(p̂(1-k), best ask)`, ask at `max(p̂(1+k), best bid)`:
    /// an order never improves on the opposite quote, so a willing buyer
    /// lifts the best ask rather than overpaying.
    #[default]
    OppositeSide,
    /// Bid at `min(p̂(1-k), best bid)`, ask at `max(p̂(1+k), best ask)`. New
    /// orders then never cross a two-sided book, so continuous trading only
    /// happens after one side has emptied.
    SameSide,
}

/// Expected price `p̂ = p exp(r̂ τ)`.
pub fn expected_price(agent: &FcnAgent, factors: &Factors, price: f64) -> f64 {
    let total = agent.w_f + agent.w_c + agent.w_n;
    let r_hat = (agent.w_f * factors.fundamental
        + agent.w_c * factors.chartist
        + agent.w_n * factors.noise)
        / total;
    price * (r_hat * agent.tau as f64).exp()
}

/// The order side and limit price the agent would submit, if any.
pub fn decide_order(
    agent: &FcnAgent,
    expected: f64,
    price: f64,
    best_bid: Option<f64>,
    best_ask: Option<f64>,
    cap: QuoteCap,
) -> Option<(Side, f64)> {
    let (bid_cap, ask_cap) = match cap {
        QuoteCap::OppositeSide => (best_ask, best_bid),
        QuoteCap::SameSide => (best_bid, best_ask),
    };
    let quote = if expected > price {
        let raw = expected * (1.0 - agent.margin);
        (Side::Bid, bid_cap.map_or(raw, |q| raw.min(q)))
    } else if expected < price {
        let raw = expected * (1.0 + agent.margin);
        (Side::Ask, ask_cap.map_or(raw, |q| raw.max(q)))
    } else {
        return None;
    };
    // A zero margin of one would quote a zero price; such orders are dropped.
    (quote.1 > 0.0 && quote.1.is_finite()).then_some(quote)
}

/// Ranges from which per-agent parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub w_f: f64,
    pub w_c: f64,
    pub w_n: f64,
    pub tau_star_min: u64,
    pub tau_star_max: u64,
    pub tau_min: u64,
    pub tau_max: u64,
    pub k_min: f64,
    pub k_max: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            w_f: 10.0,
            w_c: 1.0,
            w_n: 1.0,
            tau_star_min: 10,
            tau_star_max: 100,
            tau_min: 10,
            tau_max: 100,
            k_min: 0.0,
            k_max: 0.05,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.w_f >= 0.0 && self.w_c >= 0.0 && self.w_n >= 0.0,
            "population weights must be nonnegative"
        );
        ensure!(self.w_f + self.w_c + self.w_n > 0.0, "population weights sum to zero");
        ensure!(self.tau_star_min >= 1, "tau_star_min must be >= 1");
        ensure!(self.tau_min >= 1, "tau_min must be >= 1");
        ensure!(self.tau_star_min <= self.tau_star_max, "tau_star_min exceeds tau_star_max");
        ensure!(self.tau_min <= self.tau_max, "tau_min exceeds tau_max");
        ensure!(
            0.0 <= self.k_min && self.k_min <= self.k_max && self.k_max <= 1.0,
            "margins need 0 <= k_min <= k_max <= 1"
        );
        Ok(())
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> FcnAgent {
        let margin = if self.k_max > self.k_min {
            rng.random_range(self.k_min..self.k_max)
        } else {
            self.k_min
        };
        FcnAgent {
            w_f: self.w_f,
            w_c: self.w_c,
            w_n: self.w_n,
            tau_star: rng.random_range(self.tau_star_min..=self.tau_star_max),
            tau: rng.random_range(self.tau_min..=self.tau_max),
            margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    pub n_agents: usize,
    pub agents_per_step: usize,
    /// Per-step volatility of the log fundamental price.
    pub sigma_star: f64,
    /// Standard deviation of the noise factor.
    pub sigma: f64,
    pub preopen_steps: usize,
    pub steps_per_day: usize,
    pub days: usize,
    /// Order lifetime in steps.
    pub order_ttl: u64,
    pub quote_cap: QuoteCap,
    /// Attempts per path before a batch gives up on degenerate sessions.
    pub max_attempts: usize,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            n_agents: 100,
            agents_per_step: 10,
            sigma_star: 1e-3,
            sigma: 1e-3,
            preopen_steps: 100,
            steps_per_day: 50,
            days: 20,
            order_ttl: 200,
            quote_cap: QuoteCap::OppositeSide,
            max_attempts: 20,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_agents >= 1, "n_agents must be >= 1");
        ensure!(
            (1..=self.n_agents).contains(&self.agents_per_step),
            "agents_per_step must lie in 1..=n_agents"
        );
        ensure!(
            self.sigma_star.is_finite() && self.sigma_star >= 0.0,
            "sigma_star must be >= 0"
        );
        ensure!(self.sigma.is_finite() && self.sigma >= 0.0, "sigma must be >= 0");
        ensure!(
            self.preopen_steps >= self.n_agents,
            "preopen_steps ({}) must be >= n_agents ({})",
            self.preopen_steps,
            self.n_agents
        );
        ensure!(self.steps_per_day >= 1, "steps_per_day must be >= 1");
        ensure!(self.days >= 1, "days must be >= 1");
        ensure!(self.order_ttl >= 1, "order_ttl must be >= 1");
        ensure!(self.max_attempts >= 1, "max_attempts must be >= 1");
        Ok(())
    }

    pub fn main_steps(&self) -> usize {
        self.days * self.steps_per_day
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    /// Opening price followed by the last trade price after every main step.
    pub prices: Vec<f64>,
    /// Fundamental price at the same points.
    pub fundamental: Vec<f64>,
    pub opening_price: f64,
    pub main_trades: u64,
    pub fills: Option<Vec<Fill>>,
}

struct Session<'a> {
    config: &'a MarketConfig,
    book: OrderBook,
    agents: Vec<FcnAgent>,
    agent_rngs: Vec<ChaCha8Rng>,
    log_history: Vec<f64>,
    log_fundamental: f64,
    fundamental_rng: ChaCha8Rng,
    next_order_id: u64,
    step: u64,
    fills: Option<Vec<Fill>>,
}

impl Session<'_> {
    fn advance_fundamental(&mut self) {
        if self.config.sigma_star > 0.0 {
            let z: f64 = self.fundamental_rng.sample(StandardNormal);
            self.log_fundamental += self.config.sigma_star * z;
        }
    }

    /// Lets agent `i` act at price `price`; returns the number of fills.
    fn act(&mut self, i: usize, price: f64, mode: Mode) -> Result<usize> {
        let agent = self.agents[i];
        let fundamental = self.log_fundamental.exp();
        let factors = compute_factors(
            &agent,
            &self.log_history,
            price,
            fundamental,
            self.config.sigma,
            &mut self.agent_rngs[i],
        );
        let expected = expected_price(&agent, &factors, price);
        let Some((side, limit)) = decide_order(
            &agent,
            expected,
            price,
            self.book.best_bid(),
            self.book.best_ask(),
            self.config.quote_cap,
        ) else {
            return Ok(0);
        };
        let order = Order {
            id: self.next_order_id,
            side,
            price: limit,
            volume: 1,
            placed_at: self.step,
            expires_at: self.step + self.config.order_ttl,
        };
        self.next_order_id += 1;
        let fills = self.book.insert_order(order, mode)?;
        let n = fills.len();
        if let Some(log) = self.fills.as_mut() {
            log.extend(fills);
        }
        Ok(n)
    }
}

/// Prices outside this band (relative to the initial 1.0) mark a runaway
/// session.
pub const PRICE_BAND: (f64, f64) = (1e-4, 1e4);

/// Runs one pre-open plus main session. A session with no trade during the
/// main phase, or whose price leaves [`PRICE_BAND`], is reported as
/// [`Error::Degenerate`].
pub fn run_session(
    config: &MarketConfig,
    population: &PopulationSpec,
    seed: u64,
    record_fills: bool,
) -> Result<SessionOutcome> {
    config.validate()?;
    population.validate()?;
    let mut rng = substream(seed, 0);
    let agents: Vec<FcnAgent> = (0..config.n_agents).map(|_| population.draw(&mut rng)).collect();
    let mut session = Session {
        config,
        book: OrderBook::new(1.0)?,
        agent_rngs: (0..config.n_agents)
            .map(|i| substream(seed, 2 + i as u64))
            .collect(),
        agents,
        log_history: Vec::with_capacity(config.preopen_steps + config.main_steps() + 1),
        log_fundamental: 0.0,
        fundamental_rng: substream(seed, 1),
        next_order_id: 0,
        step: 0,
        fills: record_fills.then(Vec::new),
    };

    // Pre-open: every agent quotes once (cycling if there are more steps),
    // anchored at the fundamental.
    let mut order: Vec<usize> = (0..config.n_agents).collect();
    order.shuffle(&mut rng);
    for s in 0..config.preopen_steps {
        if s > 0 {
            session.advance_fundamental();
        }
        session.step = s as u64;
        session.book.expire_orders(session.step);
        let anchor = session.log_fundamental.exp();
        session.act(order[s % config.n_agents], anchor, Mode::Preopen)?;
        session.log_history.push(session.log_fundamental);
    }
    let uncross = session.book.uncross();
    if let Some(log) = session.fills.as_mut() {
        log.extend(uncross.fills().iter().cloned());
    }
    let opening_price = session.book.last_price();

    let mut prices = Vec::with_capacity(config.main_steps() + 1);
    let mut fundamental = Vec::with_capacity(config.main_steps() + 1);
    prices.push(opening_price);
    fundamental.push(session.log_fundamental.exp());
    let mut main_trades = 0u64;
    for s in 0..config.main_steps() {
        session.advance_fundamental();
        session.step = (config.preopen_steps + s) as u64;
        session.book.expire_orders(session.step);
        let price = session.book.last_price();
        for i in sample_indices(&mut rng, config.n_agents, config.agents_per_step) {
            // Later agents in the same step see earlier agents' trades.
            let current = session.book.last_price();
            main_trades += session.act(i, current, Mode::Continuous)? as u64;
        }
        session.log_history.push(price.ln());
        let last = session.book.last_price();
        if !(PRICE_BAND.0..=PRICE_BAND.1).contains(&last) {
            return Err(Error::Degenerate(format!(
                "price {last:e} left the admissible band at main step {s}"
            )));
        }
        prices.push(last);
        fundamental.push(session.log_fundamental.exp());
    }
    if main_trades == 0 {
        return Err(Error::Degenerate(format!(
            "no trade in {} main-session steps",
            config.main_steps()
        )));
    }
    Ok(SessionOutcome {
        prices,
        fundamental,
        opening_price,
        main_trades,
        fills: session.fills,
    })
}

/// Daily path from a session's price series: the opening price followed by
/// the last price of each day, normalized to start at 1.
pub fn extract_path(raw: &[f64], days: usize, steps_per_day: usize) -> Result<PricePath> {
    ensure!(steps_per_day >= 1, "steps_per_day must be >= 1");
    ensure!(
        raw.len() > days * steps_per_day,
        "raw series of {} points does not cover {days} days of {steps_per_day} steps",
        raw.len()
    );
    let daily: Vec<f64> = (0..=days).map(|d| raw[d * steps_per_day]).collect();
    PricePath::normalized(&daily)
}

pub fn extract_paths(raw: &[Vec<f64>], days: usize, steps_per_day: usize) -> Result<Vec<PricePath>> {
    raw.iter().map(|r| extract_path(r, days, steps_per_day)).collect()
}

/// A path batch from the artificial market, one session per path.
#[derive(Debug, Clone)]
pub struct MarketBatch {
    pub paths: Vec<PricePath>,
    /// Degenerate sessions discarded and reseeded.
    pub rejected: u64,
}

/// Seed of attempt `attempt` for path `index`.
fn session_seed(seed: u64, index: usize, attempt: usize) -> u64 {
    derive_seed(derive_seed(seed, index as u64), attempt as u64)
}

pub fn market_paths(
    config: &MarketConfig,
    population: &PopulationSpec,
    n_paths: usize,
    seed: u64,
) -> Result<MarketBatch> {
    config.validate()?;
    population.validate()?;
    let results: Vec<Result<(PricePath, u64)>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            for attempt in 0..config.max_attempts {
                match run_session(config, population, session_seed(seed, i, attempt), false) {
                    Ok(out) => {
                        let path = extract_path(&out.prices, config.days, config.steps_per_day)?;
                        return Ok((path, attempt as u64));
                    }
                    Err(Error::Degenerate(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Degenerate(format!(
                "path {i}: {} consecutive trade-free sessions",
                config.max_attempts
            )))
        })
        .collect();
    let mut paths = Vec::with_capacity(n_paths);
    let mut rejected = 0;
    for r in results {
        let (p, rej) = r?;
        paths.push(p);
        rejected += rej;
    }
    if rejected > 0 {
        log::info!("market batch: {rejected} degenerate sessions reseeded");
    }
    Ok(MarketBatch { paths, rejected })
}
