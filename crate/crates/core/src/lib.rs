//! Deep hedging laboratory: underlying-asset simulators (an FCN agent-based
//! market on a continuous double auction, GBM and Heston), hedging P&L
//! accounting, convex risk measures with indifference pricing, a small
//! reverse-mode autodiff MLP policy, hyperparameter search and
//! stylized-fact statistics.

pub mod autodiff;
pub mod error;
pub mod generator;
pub mod hedge;
pub mod instruments;
pub mod lob;
pub mod market;
pub mod market_data;
pub mod nn;
pub mod paths;
pub mod risk;
pub mod stoch;
pub mod tuner;

pub use error::{Error, Result};
pub use paths::PricePath;
