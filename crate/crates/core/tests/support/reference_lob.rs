//! Brute-force order book used as an oracle for the matching engine.
//!
//! Resting orders live in one flat vector; every match scans it for the
//! best price with the earliest arrival. Slow but obviously correct.

#![allow(dead_code)]

use hedgelab::lob::{Fill, Mode, Order, OrderBook, Side, Uncross};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
struct Resting {
    order: Order,
    seq: u64,
}

#[derive(Debug, Clone)]
pub struct ReferenceBook {
    resting: Vec<Resting>,
    seq: u64,
    step: u64,
    reference_price: f64,
}

impl ReferenceBook {
    pub fn new(reference_price: f64) -> Self {
        ReferenceBook {
            resting: Vec::new(),
            seq: 0,
            step: 0,
            reference_price,
        }
    }

    /// Index of the best resting order on `side` acceptable at `limit`.
    fn best(&self, side: Side, limit: Option<f64>) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.resting.iter().enumerate() {
            if r.order.side != side {
                continue;
            }
            if let Some(l) = limit {
                let ok = match side {
                    Side::Ask => r.order.price <= l,
                    Side::Bid => r.order.price >= l,
                };
                if !ok {
                    continue;
                }
            }
            let better = match best {
                None => true,
                Some(j) => {
                    let b = &self.resting[j];
                    let price_better = match side {
                        Side::Ask => r.order.price < b.order.price,
                        Side::Bid => r.order.price > b.order.price,
                    };
                    price_better || (r.order.price == b.order.price && r.seq < b.seq)
                }
            };
            if better {
                best = Some(i);
            }
        }
        best
    }

    pub fn insert(&mut self, mut order: Order, mode: Mode) -> Vec<Fill> {
        let mut fills = Vec::new();
        if mode == Mode::Continuous {
            let opposite = match order.side {
                Side::Bid => Side::Ask,
                Side::Ask => Side::Bid,
            };
            while order.volume > 0 {
                let Some(i) = self.best(opposite, Some(order.price)) else { break };
                let r = &mut self.resting[i];
                let volume = order.volume.min(r.order.volume);
                let (buy, sell) = match order.side {
                    Side::Bid => (order.id, r.order.id),
                    Side::Ask => (r.order.id, order.id),
                };
                fills.push(Fill {
                    step: self.step,
                    price: r.order.price,
                    volume,
                    buy_order_id: buy,
                    sell_order_id: sell,
                });
                order.volume -= volume;
                r.order.volume -= volume;
                if r.order.volume == 0 {
                    self.resting.remove(i);
                }
            }
        }
        if order.volume > 0 {
            self.seq += 1;
            self.resting.push(Resting {
                order,
                seq: self.seq,
            });
        }
        fills
    }

    /// Removes expired orders and returns their total remaining volume.
    pub fn expire(&mut self, now: u64) -> u64 {
        self.step = self.step.max(now);
        let before: u64 = self.volume();
        self.resting.retain(|r| r.order.expires_at > now);
        before - self.volume()
    }

    pub fn volume(&self) -> u64 {
        self.resting.iter().map(|r| r.order.volume as u64).sum()
    }

    pub fn uncross(&mut self) -> Option<(f64, Vec<Fill>)> {
        let mut best: Option<(u64, f64)> = None;
        let prices: Vec<f64> = self.resting.iter().map(|r| r.order.price).collect();
        for &p in &prices {
            let demand: u64 = self
                .resting
                .iter()
                .filter(|r| r.order.side == Side::Bid && r.order.price >= p)
                .map(|r| r.order.volume as u64)
                .sum();
            let supply: u64 = self
                .resting
                .iter()
                .filter(|r| r.order.side == Side::Ask && r.order.price <= p)
                .map(|r| r.order.volume as u64)
                .sum();
            let vol = demand.min(supply);
            if vol == 0 {
                continue;
            }
            let take = match best {
                None => true,
                Some((bv, bp)) => {
                    let (dn, db) = ((p - self.reference_price).abs(), (bp - self.reference_price).abs());
                    vol > bv || (vol == bv && (dn < db || (dn == db && p < bp)))
                }
            };
            if take {
                best = Some((vol, p));
            }
        }
        let (mut remaining, price) = best?;
        let mut fills = Vec::new();
        while remaining > 0 {
            let b = self.best(Side::Bid, None).unwrap();
            let a = self.best(Side::Ask, None).unwrap();
            let volume = (self.resting[b].order.volume.min(self.resting[a].order.volume) as u64)
                .min(remaining) as u32;
            fills.push(Fill {
                step: self.step,
                price,
                volume,
                buy_order_id: self.resting[b].order.id,
                sell_order_id: self.resting[a].order.id,
            });
            self.resting[b].order.volume -= volume;
            self.resting[a].order.volume -= volume;
            remaining -= volume as u64;
            self.resting.retain(|r| r.order.volume > 0);
        }
        Some((price, fills))
    }

    /// `(id, remaining volume)` per side in priority order.
    pub fn snapshot(&self, side: Side) -> Vec<(u64, u32)> {
        let mut v: Vec<&Resting> = self.resting.iter().filter(|r| r.order.side == side).collect();
        v.sort_by(|a, b| {
            let by_price = match side {
                Side::Ask => a.order.price.total_cmp(&b.order.price),
                Side::Bid => b.order.price.total_cmp(&a.order.price),
            };
            by_price.then(a.seq.cmp(&b.seq))
        });
        v.into_iter().map(|r| (r.order.id, r.order.volume)).collect()
    }
}

fn snapshot(book: &OrderBook, side: Side) -> Vec<(u64, u32)> {
    book.resting(side).into_iter().map(|o| (o.id, o.volume)).collect()
}

#[derive(Debug, Clone)]
pub enum Event {
    Advance(u64),
    Insert(Order),
}

/// Random stream: a pre-open phase of `preopen` orders, then `n_orders`
/// continuous orders interleaved with clock advances. Prices sit on a
/// 0.001 grid around 1 so that many orders share a level.
pub fn random_stream(seed: u64, preopen: usize, n_orders: usize) -> (Vec<Order>, Vec<Event>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut id = 0u64;
    let mut now = 0u64;
    let order = |rng: &mut ChaCha8Rng, now: u64, id: &mut u64| {
        *id += 1;
        let side = if rng.random::<bool>() { Side::Bid } else { Side::Ask };
        let tick: i32 = rng.random_range(-25..=25);
        Order {
            id: *id,
            side,
            price: (1000 + tick) as f64 / 1000.0,
            volume: rng.random_range(1..=5),
            placed_at: now,
            expires_at: now + rng.random_range(1..=60),
        }
    };
    let pre = (0..preopen).map(|_| order(&mut rng, now, &mut id)).collect();
    let mut events = Vec::with_capacity(n_orders * 2);
    for _ in 0..n_orders {
        if rng.random_range(0..3) == 0 {
            now += 1;
            events.push(Event::Advance(now));
        }
        events.push(Event::Insert(order(&mut rng, now, &mut id)));
    }
    (pre, events)
}

#[derive(Debug, Default)]
pub struct Equivalence {
    pub fills: usize,
    pub filled_volume: u64,
}

/// Replays the stream through both books, comparing fills event by event
/// and checking the uncrossed-book and volume-conservation invariants.
pub fn check_equivalence(pre: &[Order], events: &[Event], snapshot_every: usize) -> Result<Equivalence, String> {
    let mut book = OrderBook::new(1.0).map_err(|e| e.to_string())?;
    let mut reference = ReferenceBook::new(1.0);
    let mut submitted = 0u64;
    let mut expired = 0u64;
    let mut stats = Equivalence::default();
    for o in pre {
        submitted += o.volume as u64;
        book.insert_order(o.clone(), Mode::Preopen).map_err(|e| e.to_string())?;
        reference.insert(o.clone(), Mode::Preopen);
    }
    let opened = book.uncross();
    let expected = reference.uncross();
    match (&opened, &expected) {
        (Uncross::Opened { price, fills }, Some((p, f))) if price == p && fills == f => {
            stats.fills += fills.len();
            stats.filled_volume += fills.iter().map(|f| f.volume as u64).sum::<u64>();
        }
        (Uncross::NoCross, None) => {}
        _ => return Err(format!("uncross differs: {opened:?} vs {expected:?}")),
    }
    for (k, ev) in events.iter().enumerate() {
        match ev {
            Event::Advance(now) => {
                book.expire_orders(*now);
                expired += reference.expire(*now);
            }
            Event::Insert(o) => {
                submitted += o.volume as u64;
                let got = book.insert_order(o.clone(), Mode::Continuous).map_err(|e| e.to_string())?;
                let want = reference.insert(o.clone(), Mode::Continuous);
                if got != want {
                    return Err(format!("event {k}: fills {got:?} vs reference {want:?}"));
                }
                stats.fills += got.len();
                stats.filled_volume += got.iter().map(|f| f.volume as u64).sum::<u64>();
            }
        }
        if let (Some(b), Some(a)) = (book.best_bid(), book.best_ask()) {
            if b >= a {
                return Err(format!("event {k}: crossed book {b} >= {a}"));
            }
        }
        if k % snapshot_every == 0 || k + 1 == events.len() {
            for side in [Side::Bid, Side::Ask] {
                if snapshot(&book, side) != reference.snapshot(side) {
                    return Err(format!("event {k}: resting {side:?} orders differ"));
                }
            }
            let resting: u64 = [Side::Bid, Side::Ask]
                .iter()
                .flat_map(|&s| book.resting(s))
                .map(|o| o.volume as u64)
                .sum();
            if submitted != 2 * stats.filled_volume + resting + expired {
                return Err(format!(
                    "event {k}: volume not conserved: submitted {submitted}, filled 2x{}, resting {resting}, expired {expired}",
                    stats.filled_volume
                ));
            }
        }
    }
    Ok(stats)
}
