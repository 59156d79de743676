use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{Cents, OrderId, Side};

/// Resting orders of one bin. Keys sort best-first: bids by descending
/// price, asks by ascending price, ties broken by arrival.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct BinBook {
    bids: BTreeMap<(Cents, OrderId), ()>,
    asks: BTreeMap<(Cents, OrderId), ()>,
}

fn key(side: Side, price: Cents, id: OrderId) -> (Cents, OrderId) {
    match side {
        Side::Buy => (-price, id),
        Side::Sell => (price, id),
    }
}

fn price_of(side: Side, k: Cents) -> Cents {
    match side {
        Side::Buy => -k,
        Side::Sell => k,
    }
}

impl BinBook {
    fn side(&self, side: Side) -> &BTreeMap<(Cents, OrderId), ()> {
        match side {
            Side::Buy => &self.bids,
            Side::Sell => &self.asks,
        }
    }

    fn side_mut(&mut self, side: Side) -> &mut BTreeMap<(Cents, OrderId), ()> {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    pub(crate) fn insert(&mut self, side: Side, price: Cents, id: OrderId) {
        self.side_mut(side).insert(key(side, price, id), ());
    }

    pub(crate) fn remove(&mut self, side: Side, price: Cents, id: OrderId) {
        self.side_mut(side).remove(&key(side, price, id));
    }

    /// Best resting order on `side` as (price, id).
    pub(crate) fn best(&self, side: Side) -> Option<(Cents, OrderId)> {
        self.side(side).keys().next().map(|&(k, id)| (price_of(side, k), id))
    }

    /// Orders on `side` in priority order.
    pub(crate) fn orders(&self, side: Side) -> Vec<(Cents, OrderId)> {
        self.side(side).keys().map(|&(k, id)| (price_of(side, k), id)).collect()
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.bids.is_empty() && self.asks.is_empty()
    }
}
