mod support {
    pub mod reference_lob;
}

use hedgelab::lob::{Mode, Order, OrderBook, Side};
use proptest::prelude::*;
use support::reference_lob::{check_equivalence, random_stream};

#[test]
fn long_stream_matches_reference() {
    let (pre, events) = random_stream(42, 200, 100_000);
    let stats = check_equivalence(&pre, &events, 997).unwrap();
    assert!(stats.fills > 10_000, "stream should trade often, got {} fills", stats.fills);
}

#[test]
fn empty_preopen_does_not_cross() {
    let (_, events) = random_stream(1, 0, 1_000);
    check_equivalence(&[], &events, 1).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_streams_match_reference(seed in any::<u64>(), preopen in 0usize..60, n in 1usize..400) {
        let (pre, events) = random_stream(seed, preopen, n);
        prop_assert!(check_equivalence(&pre, &events, 1).is_ok());
    }

    #[test]
    fn expiry_removes_exactly_the_due_orders(ttls in proptest::collection::vec(1u64..20, 1..40), now in 0u64..25) {
        let mut book = OrderBook::new(1.0).unwrap();
        for (i, ttl) in ttls.iter().enumerate() {
            let side = if i % 2 == 0 { Side::Bid } else { Side::Ask };
            // Bids below asks so nothing trades.
            let price = if side == Side::Bid { 0.9 } else { 1.1 };
            let order = Order { id: i as u64, side, price, volume: 1, placed_at: 0, expires_at: *ttl };
            book.insert_order(order, Mode::Continuous).unwrap();
        }
        book.expire_orders(now);
        let (b, a) = book.depth();
        let alive = ttls.iter().filter(|&&t| t > now).count();
        prop_assert_eq!(b + a, alive);
        prop_assert_eq!(book.step(), now);
    }
}
