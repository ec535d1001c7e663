//! Continuous double auction with price-time priority.
//!
//! Bids are kept in descending price order and asks in ascending order; each
//! price level is a FIFO queue. Incoming orders in continuous mode execute at
//! the resting order's price. In pre-open mode orders only accumulate, and a
//! single [`OrderBook::uncross`] call opens the market at the price that
//! maximizes executable volume.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub type OrderId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Continuous,
    Preopen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: OrderId,
    pub side: Side,
    pub price: f64,
    pub volume: u32,
    pub placed_at: u64,
    pub expires_at: u64,
}

impl Order {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.price.is_finite() && self.price > 0.0,
            "order {} has non-positive price {}",
            self.id,
            self.price
        );
        ensure!(self.volume >= 1, "order {} has zero volume", self.id);
        ensure!(
            self.expires_at > self.placed_at,
            "order {} expires at {} before placement {}",
            self.id,
            self.expires_at,
            self.placed_at
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub step: u64,
    pub price: f64,
    pub volume: u32,
    pub buy_order_id: OrderId,
    pub sell_order_id: OrderId,
}

/// Result of [`OrderBook::uncross`].
#[derive(Debug, Clone, PartialEq)]
pub enum Uncross {
    Opened { price: f64, fills: Vec<Fill> },
    /// Nothing crossed; the book and last price are untouched.
    NoCross,
}

impl Uncross {
    pub fn fills(&self) -> &[Fill] {
        match self {
            Uncross::Opened { fills, .. } => fills,
            Uncross::NoCross => &[],
        }
    }
}

/// Total order over finite prices.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Px(f64);

impl Eq for Px {}

impl PartialOrd for Px {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Px {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone)]
pub struct OrderBook {
    bids: BTreeMap<Reverse<Px>, VecDeque<Order>>,
    asks: BTreeMap<Px, VecDeque<Order>>,
    expiries: BinaryHeap<Reverse<(u64, OrderId, Side, Px)>>,
    last_price: f64,
    reference_price: f64,
    step: u64,
}

impl OrderBook {
    /// Empty book whose last price (and uncross tie-break anchor) is
    /// `initial_price`.
    pub fn new(initial_price: f64) -> Result<Self> {
        ensure!(
            initial_price.is_finite() && initial_price > 0.0,
            "initial price must be positive"
        );
        Ok(OrderBook {
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            expiries: BinaryHeap::new(),
            last_price: initial_price,
            reference_price: initial_price,
            step: 0,
        })
    }

    pub fn last_price(&self) -> f64 {
        self.last_price
    }

    pub fn best_bid(&self) -> Option<f64> {
        self.bids.keys().next().map(|k| k.0 .0)
    }

    pub fn best_ask(&self) -> Option<f64> {
        self.asks.keys().next().map(|k| k.0)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty() && self.asks.is_empty()
    }

    /// Number of resting orders on each side.
    pub fn depth(&self) -> (usize, usize) {
        (
            self.bids.values().map(VecDeque::len).sum(),
            self.asks.values().map(VecDeque::len).sum(),
        )
    }

    /// Resting orders of one side in priority order.
    pub fn resting(&self, side: Side) -> Vec<&Order> {
        match side {
            Side::Bid => self.bids.values().flatten().collect(),
            Side::Ask => self.asks.values().flatten().collect(),
        }
    }

    pub fn insert_order(&mut self, order: Order, mode: Mode) -> Result<Vec<Fill>> {
        order.validate()?;
        let mut order = order;
        let mut fills = Vec::new();
        if mode == Mode::Continuous {
            self.match_incoming(&mut order, &mut fills);
        }
        if order.volume > 0 {
            self.rest(order);
        }
        if let Some(fill) = fills.last() {
            self.last_price = fill.price;
        }
        Ok(fills)
    }

    fn match_incoming(&mut self, order: &mut Order, fills: &mut Vec<Fill>) {
        let step = self.step;
        match order.side {
            Side::Bid => {
                while order.volume > 0 {
                    let Some(mut level) = self.asks.first_entry() else { break };
                    let level_price = level.key().0;
                    if level_price > order.price {
                        break;
                    }
                    let queue = level.get_mut();
                    while order.volume > 0 {
                        let Some(resting) = queue.front_mut() else { break };
                        let volume = order.volume.min(resting.volume);
                        fills.push(Fill {
                            step,
                            price: level_price,
                            volume,
                            buy_order_id: order.id,
                            sell_order_id: resting.id,
                        });
                        order.volume -= volume;
                        resting.volume -= volume;
                        if resting.volume == 0 {
                            queue.pop_front();
                        }
                    }
                    if queue.is_empty() {
                        level.remove();
                    }
                }
            }
            Side::Ask => {
                while order.volume > 0 {
                    let Some(mut level) = self.bids.first_entry() else { break };
                    let level_price = level.key().0 .0;
                    if level_price < order.price {
                        break;
                    }
                    let queue = level.get_mut();
                    while order.volume > 0 {
                        let Some(resting) = queue.front_mut() else { break };
                        let volume = order.volume.min(resting.volume);
                        fills.push(Fill {
                            step,
                            price: level_price,
                            volume,
                            buy_order_id: resting.id,
                            sell_order_id: order.id,
                        });
                        order.volume -= volume;
                        resting.volume -= volume;
                        if resting.volume == 0 {
                            queue.pop_front();
                        }
                    }
                    if queue.is_empty() {
                        level.remove();
                    }
                }
            }
        }
    }

    fn rest(&mut self, order: Order) {
        let px = Px(order.price);
        self.expiries
            .push(Reverse((order.expires_at, order.id, order.side, px)));
        match order.side {
            Side::Bid => self.bids.entry(Reverse(px)).or_default().push_back(order),
            Side::Ask => self.asks.entry(px).or_default().push_back(order),
        }
    }

    /// Removes every resting order with `expires_at <= now` and advances the
    /// step counter to `now`.
    pub fn expire_orders(&mut self, now: u64) {
        self.step = self.step.max(now);
        while let Some(Reverse((expires_at, id, side, px))) = self.expiries.peek().copied() {
            if expires_at > now {
                break;
            }
            self.expiries.pop();
            // Entries for already-filled orders are stale and simply dropped.
            match side {
                Side::Bid => remove_from_level(&mut self.bids, Reverse(px), id),
                Side::Ask => remove_from_level(&mut self.asks, px, id),
            }
        }
    }

    /// Opens a book accumulated in pre-open mode: executes all crossing
    /// volume at the single price maximizing executable volume. Ties go to
    /// the price closest to the reference price, then to the lower price.
    pub fn uncross(&mut self) -> Uncross {
        let mut candidates: Vec<f64> = self
            .bids
            .keys()
            .map(|k| k.0 .0)
            .chain(self.asks.keys().map(|k| k.0))
            .collect();
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();

        let mut best: Option<(u64, f64)> = None;
        for &p in &candidates {
            let executable = self.executable_volume(p);
            if executable == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((vol, bp)) => {
                    executable > vol
                        || (executable == vol && {
                            let d_new = (p - self.reference_price).abs();
                            let d_old = (bp - self.reference_price).abs();
                            d_new < d_old || (d_new == d_old && p < bp)
                        })
                }
            };
            if better {
                best = Some((executable, p));
            }
        }
        let Some((mut remaining, price)) = best else {
            return Uncross::NoCross;
        };

        let mut fills = Vec::new();
        while remaining > 0 {
            let mut bid_level = self.bids.first_entry().expect("bid volume available");
            let mut ask_level = self.asks.first_entry().expect("ask volume available");
            let bid = bid_level.get_mut().front_mut().expect("nonempty level");
            let ask = ask_level.get_mut().front_mut().expect("nonempty level");
            let volume = (bid.volume.min(ask.volume) as u64).min(remaining) as u32;
            fills.push(Fill {
                step: self.step,
                price,
                volume,
                buy_order_id: bid.id,
                sell_order_id: ask.id,
            });
            bid.volume -= volume;
            ask.volume -= volume;
            remaining -= volume as u64;
            if bid.volume == 0 {
                bid_level.get_mut().pop_front();
                if bid_level.get().is_empty() {
                    bid_level.remove();
                }
            }
            if ask.volume == 0 {
                ask_level.get_mut().pop_front();
                if ask_level.get().is_empty() {
                    ask_level.remove();
                }
            }
        }
        self.last_price = price;
        Uncross::Opened { price, fills }
    }

    fn executable_volume(&self, price: f64) -> u64 {
        let demand: u64 = self
            .bids
            .iter()
            .take_while(|(k, _)| k.0 .0 >= price)
            .flat_map(|(_, q)| q.iter())
            .map(|o| o.volume as u64)
            .sum();
        let supply: u64 = self
            .asks
            .iter()
            .take_while(|(k, _)| k.0 <= price)
            .flat_map(|(_, q)| q.iter())
            .map(|o| o.volume as u64)
            .sum();
        demand.min(supply)
    }
}

fn remove_from_level<K: Ord>(levels: &mut BTreeMap<K, VecDeque<Order>>, key: K, id: OrderId) {
    if let Some(queue) = levels.get_mut(&key) {
        if let Some(pos) = queue.iter().position(|o| o.id == id) {
            queue.remove(pos);
        }
        if queue.is_empty() {
            levels.remove(&key);
        }
    }
}

/// Writes fills as `step,price,volume,buy_order_id,sell_order_id` rows.
pub fn write_fills_csv<W: Write>(mut out: W, fills: &[Fill], header: bool) -> std::io::Result<()> {
    if header {
        writeln!(out, "step,price,volume,buy_order_id,sell_order_id")?;
    }
    for f in fills {
        writeln!(
            out,
            "{},{},{},{},{}",
            f.step, f.price, f.volume, f.buy_order_id, f.sell_order_id
        )?;
    }
    Ok(())
}
