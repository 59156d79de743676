//! Limit order book exchange for n-bin event markets.
//!
//! Prices are integer cents in `[1, 99]`, quantities whole contracts. Every
//! account keeps a single balance; the part of it locked against open orders
//! and short positions is the escrow, and the rest is free cash. Escrow is
//! recomputed from state rather than tracked incrementally, so it always
//! equals the worst-case liability:
//!
//! - a resting buy locks `price * remaining`;
//! - a short position locks `100` per contract;
//! - a resting sell locks `(100 - price)` per contract not covered by long
//!   holdings in the same bin (holdings cover the lowest-priced sells first).
//!
//! Crossing orders execute at the resting order's price with price-time
//! priority.

mod book;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use book::BinBook;

/// Integer cents.
pub type Cents = i64;

/// Payout of one winning contract.
pub const CONTRACT_PAYOUT: Cents = 100;
pub const MIN_PRICE: Cents = 1;
pub const MAX_PRICE: Cents = 99;
pub const MIN_BINS: usize = 2;
pub const MAX_BINS: usize = 64;
/// How many recent trades a snapshot carries.
pub const SNAPSHOT_TRADES: usize = 20;

macro_rules! id_type {
    ($name:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        #[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(transparent))]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(AccountId);
id_type!(MarketId);
id_type!(OrderId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "UPPERCASE"))]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn opposite(self) -> Self {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }

    /// +1 for buys, -1 for sells.
    pub fn sign(self) -> i64 {
        match self {
            Side::Buy => 1,
            Side::Sell => -1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("unknown market {0}")]
    UnknownMarket(MarketId),
    #[error("market {market} has no bin {bin}")]
    UnknownBin { market: MarketId, bin: usize },
    #[error("unknown or closed order {0}")]
    UnknownOrder(OrderId),
    #[error("order {0} belongs to another account")]
    NotOwner(OrderId),
    #[error("price {0} outside [1, 99] cents")]
    PriceOutOfRange(Cents),
    #[error("quantity must be at least 1")]
    ZeroQuantity,
    #[error("insufficient margin: need {required} cents, have {available}")]
    InsufficientMargin { required: Cents, available: Cents },
    #[error("order would trade against the account's own resting order {0}")]
    SelfTrade(OrderId),
    #[error("order would exceed the position cap of {0} contracts")]
    PositionCap(i64),
    #[error("market {0} is settled")]
    MarketSettled(MarketId),
    #[error("market {0} was already settled")]
    AlreadySettled(MarketId),
    #[error("initial cash must be non-negative")]
    NegativeCash,
    #[error("a market needs between 2 and 64 bins, got {0}")]
    BadBinCount(usize),
    #[error("name {0:?} is already taken")]
    DuplicateName(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Order {
    pub id: OrderId,
    pub account: AccountId,
    pub market: MarketId,
    pub bin: usize,
    pub side: Side,
    pub price: Cents,
    pub quantity: i64,
    pub remaining: i64,
    /// Arrival sequence; equal to the id, kept explicit for ledgers.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Fill {
    pub seq: u64,
    pub market: MarketId,
    pub bin: usize,
    pub taker_order: OrderId,
    pub maker_order: OrderId,
    pub taker: AccountId,
    pub maker: AccountId,
    pub taker_side: Side,
    pub price: Cents,
    pub quantity: i64,
}

impl Fill {
    pub fn buyer(&self) -> AccountId {
        if self.taker_side == Side::Buy {
            self.taker
        } else {
            self.maker
        }
    }

    pub fn seller(&self) -> AccountId {
        if self.taker_side == Side::Buy {
            self.maker
        } else {
            self.taker
        }
    }

    pub fn involves(&self, account: AccountId) -> bool {
        self.taker == account || self.maker == account
    }
}

/// Result of a submission: the order id and any immediate fills. The order
/// rests if `resting` is true.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Submission {
    pub order: OrderId,
    pub fills: Vec<Fill>,
    pub resting: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Payout {
    pub account: AccountId,
    pub amount: Cents,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Settlement {
    pub market: MarketId,
    pub winning_bin: usize,
    pub cancelled: Vec<OrderId>,
    pub payouts: Vec<Payout>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Account {
    name: String,
    balance: Cents,
    positions: BTreeMap<(MarketId, usize), i64>,
    orders: BTreeSet<OrderId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Market {
    name: String,
    labels: Vec<String>,
    books: Vec<BinBook>,
    trades: Vec<Fill>,
    settlement: Option<Settlement>,
}

/// Aggregated depth at one price.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Level {
    pub price: Cents,
    pub quantity: i64,
    pub orders: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ladder {
    /// Best (highest) first.
    pub bids: Vec<Level>,
    /// Best (lowest) first.
    pub asks: Vec<Level>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BookView {
    pub market: MarketId,
    pub name: String,
    pub labels: Vec<String>,
    pub ladders: Vec<Ladder>,
    pub orders: Vec<Order>,
    pub last_trades: Vec<Fill>,
    pub settled: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PositionView {
    pub market: MarketId,
    pub bin: usize,
    pub quantity: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AccountView {
    pub id: AccountId,
    pub name: String,
    pub cash: Cents,
    pub escrow: Cents,
    pub positions: Vec<PositionView>,
    pub open_orders: Vec<OrderId>,
}

impl AccountView {
    pub fn balance(&self) -> Cents {
        self.cash + self.escrow
    }

    pub fn position(&self, market: MarketId, bin: usize) -> i64 {
        self.positions.iter().find(|p| p.market == market && p.bin == bin).map_or(0, |p| p.quantity)
    }
}

/// Everything needed to audit the exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ledger {
    pub accounts: Vec<AccountView>,
    pub open_orders: Vec<Order>,
    pub fills: Vec<Fill>,
    pub settlements: Vec<Settlement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Exchange {
    accounts: BTreeMap<AccountId, Account>,
    markets: BTreeMap<MarketId, Market>,
    orders: BTreeMap<OrderId, Order>,
    fills: Vec<Fill>,
    next_account: u64,
    next_market: u64,
    next_order: u64,
    next_fill: u64,
    position_cap: Option<i64>,
}

impl Exchange {
    pub fn new() -> Self {
        Self::default()
    }

    /// Limits the absolute position any account may reach in a bin.
    pub fn with_position_cap(cap: i64) -> Self {
        Self { position_cap: Some(cap), ..Self::default() }
    }

    pub fn position_cap(&self) -> Option<i64> {
        self.position_cap
    }

    pub fn open_account(&mut self, name: &str, cash: Cents) -> Result<AccountId, EngineError> {
        if cash < 0 {
            return Err(EngineError::NegativeCash);
        }
        if self.accounts.values().any(|a| a.name == name) {
            return Err(EngineError::DuplicateName(name.into()));
        }
        let id = AccountId(self.next_account);
        self.next_account += 1;
        self.accounts.insert(
            id,
            Account { name: name.into(), balance: cash, positions: BTreeMap::new(), orders: BTreeSet::new() },
        );
        Ok(id)
    }

    pub fn create_market(&mut self, name: &str, labels: Vec<String>) -> Result<MarketId, EngineError> {
        if !(MIN_BINS..=MAX_BINS).contains(&labels.len()) {
            return Err(EngineError::BadBinCount(labels.len()));
        }
        if self.markets.values().any(|m| m.name == name) {
            return Err(EngineError::DuplicateName(name.into()));
        }
        let id = MarketId(self.next_market);
        self.next_market += 1;
        let books = (0..labels.len()).map(|_| BinBook::default()).collect();
        self.markets.insert(id, Market { name: name.into(), labels, books, trades: Vec::new(), settlement: None });
        Ok(id)
    }

    pub fn account_id(&self, name: &str) -> Option<AccountId> {
        self.accounts.iter().find(|(_, a)| a.name == name).map(|(&id, _)| id)
    }

    pub fn market_id(&self, name: &str) -> Option<MarketId> {
        self.markets.iter().find(|(_, m)| m.name == name).map(|(&id, _)| id)
    }

    pub fn market_ids(&self) -> Vec<MarketId> {
        self.markets.keys().copied().collect()
    }

    pub fn bins(&self, market: MarketId) -> Result<usize, EngineError> {
        Ok(self.market(market)?.labels.len())
    }

    pub fn is_settled(&self, market: MarketId) -> Result<bool, EngineError> {
        Ok(self.market(market)?.settlement.is_some())
    }

    pub fn settlement(&self, market: MarketId) -> Result<Option<&Settlement>, EngineError> {
        Ok(self.market(market)?.settlement.as_ref())
    }

    fn market(&self, id: MarketId) -> Result<&Market, EngineError> {
        self.markets.get(&id).ok_or(EngineError::UnknownMarket(id))
    }

    fn account(&self, id: AccountId) -> Result<&Account, EngineError> {
        self.accounts.get(&id).ok_or(EngineError::UnknownAccount(id))
    }

    pub fn order(&self, id: OrderId) -> Option<&Order> {
        self.orders.get(&id)
    }

    /// Open orders of an account in a market, oldest first.
    pub fn orders_of(&self, account: AccountId, market: MarketId) -> Vec<OrderId> {
        self.accounts
            .get(&account)
            .map(|a| a.orders.iter().copied().filter(|o| self.orders[o].market == market).collect())
            .unwrap_or_default()
    }

    pub fn position(&self, account: AccountId, market: MarketId, bin: usize) -> i64 {
        self.accounts.get(&account).and_then(|a| a.positions.get(&(market, bin)).copied()).unwrap_or(0)
    }

    /// Cash plus escrow.
    pub fn balance(&self, account: AccountId) -> Result<Cents, EngineError> {
        Ok(self.account(account)?.balance)
    }

    pub fn escrow(&self, account: AccountId) -> Result<Cents, EngineError> {
        let acct = self.account(account)?;
        Ok(self.escrow_of(acct, None))
    }

    /// Balance not locked as escrow.
    pub fn cash(&self, account: AccountId) -> Result<Cents, EngineError> {
        let acct = self.account(account)?;
        Ok(acct.balance - self.escrow_of(acct, None))
    }

    /// Lock for one (market, bin), optionally including a hypothetical new
    /// order.
    fn bin_lock(&self, acct: &Account, market: MarketId, bin: usize, extra: Option<(Side, Cents, i64)>) -> Cents {
        let pos = acct.positions.get(&(market, bin)).copied().unwrap_or(0);
        let mut buys: Cents = 0;
        let mut sells: Vec<(Cents, i64)> = Vec::new();
        let resting = acct
            .orders
            .iter()
            .map(|id| &self.orders[id])
            .filter(|o| o.market == market && o.bin == bin)
            .map(|o| (o.side, o.price, o.remaining));
        for (side, price, qty) in resting.chain(extra) {
            match side {
                Side::Buy => buys += price * qty,
                Side::Sell => sells.push((price, qty)),
            }
        }
        sells.sort_unstable();
        let mut cover = pos.max(0);
        let mut sell_lock = 0;
        for (price, qty) in sells {
            let covered = qty.min(cover);
            cover -= covered;
            sell_lock += (CONTRACT_PAYOUT - price) * (qty - covered);
        }
        buys + sell_lock + CONTRACT_PAYOUT * (-pos).max(0)
    }

    fn escrow_of(&self, acct: &Account, extra: Option<(MarketId, usize, Side, Cents, i64)>) -> Cents {
        let mut keys: BTreeSet<(MarketId, usize)> = acct.positions.keys().copied().collect();
        keys.extend(acct.orders.iter().map(|id| (self.orders[id].market, self.orders[id].bin)));
        if let Some((m, b, ..)) = extra {
            keys.insert((m, b));
        }
        keys.into_iter()
            .map(|(m, b)| {
                let e = extra.filter(|x| x.0 == m && x.1 == b).map(|x| (x.2, x.3, x.4));
                self.bin_lock(acct, m, b, e)
            })
            .sum()
    }

    pub fn submit(
        &mut self,
        account: AccountId,
        market: MarketId,
        bin: usize,
        side: Side,
        price: Cents,
        quantity: i64,
    ) -> Result<Submission, EngineError> {
        let acct = self.account(account)?;
        let m = self.market(market)?;
        if m.settlement.is_some() {
            return Err(EngineError::MarketSettled(market));
        }
        if bin >= m.books.len() {
            return Err(EngineError::UnknownBin { market, bin });
        }
        if !(MIN_PRICE..=MAX_PRICE).contains(&price) {
            return Err(EngineError::PriceOutOfRange(price));
        }
        if quantity < 1 {
            return Err(EngineError::ZeroQuantity);
        }
        let crosses = |p: Cents| match side {
            Side::Buy => p <= price,
            Side::Sell => p >= price,
        };
        if let Some(&own) = acct.orders.iter().find(|id| {
            let o = &self.orders[*id];
            o.market == market && o.bin == bin && o.side == side.opposite() && crosses(o.price)
        }) {
            return Err(EngineError::SelfTrade(own));
        }
        if let Some(cap) = self.position_cap {
            let pos = acct.positions.get(&(market, bin)).copied().unwrap_or(0);
            if (pos + side.sign() * quantity).abs() > cap {
                return Err(EngineError::PositionCap(cap));
            }
        }
        let required = self.escrow_of(acct, Some((market, bin, side, price, quantity)));
        if required > acct.balance {
            let available = acct.balance - self.escrow_of(acct, None);
            let current = self.escrow_of(acct, None);
            return Err(EngineError::InsufficientMargin { required: required - current, available });
        }

        let id = OrderId(self.next_order);
        self.next_order += 1;
        let mut order = Order { id, account, market, bin, side, price, quantity, remaining: quantity, seq: id.0 };
        let mut fills = Vec::new();
        while order.remaining > 0 {
            let book = &self.markets[&market].books[bin];
            let Some((maker_price, maker_id)) = book.best(side.opposite()) else { break };
            if !crosses(maker_price) {
                break;
            }
            let maker = self.orders.get_mut(&maker_id).expect("book and order map agree");
            let qty = order.remaining.min(maker.remaining);
            maker.remaining -= qty;
            order.remaining -= qty;
            let maker_account = maker.account;
            if maker.remaining == 0 {
                self.orders.remove(&maker_id);
                self.accounts.get_mut(&maker_account).unwrap().orders.remove(&maker_id);
                self.markets.get_mut(&market).unwrap().books[bin].remove(side.opposite(), maker_price, maker_id);
            }
            let fill = Fill {
                seq: self.next_fill,
                market,
                bin,
                taker_order: id,
                maker_order: maker_id,
                taker: account,
                maker: maker_account,
                taker_side: side,
                price: maker_price,
                quantity: qty,
            };
            self.next_fill += 1;
            self.apply_fill(&fill);
            fills.push(fill);
        }
        let resting = order.remaining > 0;
        if resting {
            self.markets.get_mut(&market).unwrap().books[bin].insert(side, price, id);
            self.accounts.get_mut(&account).unwrap().orders.insert(id);
            self.orders.insert(id, order);
        }
        Ok(Submission { order: id, fills, resting })
    }

    fn apply_fill(&mut self, fill: &Fill) {
        let notional = fill.price * fill.quantity;
        let key = (fill.market, fill.bin);
        let buyer = self.accounts.get_mut(&fill.buyer()).unwrap();
        buyer.balance -= notional;
        *buyer.positions.entry(key).or_insert(0) += fill.quantity;
        let seller = self.accounts.get_mut(&fill.seller()).unwrap();
        seller.balance += notional;
        *seller.positions.entry(key).or_insert(0) -= fill.quantity;
        for acct in [fill.buyer(), fill.seller()] {
            let a = self.accounts.get_mut(&acct).unwrap();
            if a.positions.get(&key) == Some(&0) {
                a.positions.remove(&key);
            }
        }
        let m = self.markets.get_mut(&fill.market).unwrap();
        m.trades.push(fill.clone());
        self.fills.push(fill.clone());
    }

    /// Cancels an open order and returns the escrow released.
    pub fn cancel(&mut self, account: AccountId, order: OrderId) -> Result<Cents, EngineError> {
        self.account(account)?;
        let o = self.orders.get(&order).ok_or(EngineError::UnknownOrder(order))?;
        if o.account != account {
            return Err(EngineError::NotOwner(order));
        }
        let before = self.escrow(account)?;
        self.remove_order(order);
        Ok(before - self.escrow(account)?)
    }

    fn remove_order(&mut self, id: OrderId) {
        if let Some(o) = self.orders.remove(&id) {
            self.accounts.get_mut(&o.account).unwrap().orders.remove(&id);
            self.markets.get_mut(&o.market).unwrap().books[o.bin].remove(o.side, o.price, id);
        }
    }

    /// Cancels all of an account's orders in a market, oldest first.
    pub fn cancel_all(&mut self, account: AccountId, market: MarketId) -> Result<Vec<OrderId>, EngineError> {
        self.account(account)?;
        self.market(market)?;
        let ids = self.orders_of(account, market);
        for &id in &ids {
            self.remove_order(id);
        }
        Ok(ids)
    }

    /// Cancels every open order in the market, then pays 100 cents per
    /// winning contract (negative for shorts) and zeroes all positions.
    pub fn settle(&mut self, market: MarketId, winning_bin: usize) -> Result<Settlement, EngineError> {
        let m = self.market(market)?;
        if m.settlement.is_some() {
            return Err(EngineError::AlreadySettled(market));
        }
        if winning_bin >= m.books.len() {
            return Err(EngineError::UnknownBin { market, bin: winning_bin });
        }
        let cancelled: Vec<OrderId> = self.orders.values().filter(|o| o.market == market).map(|o| o.id).collect();
        for &id in &cancelled {
            self.remove_order(id);
        }
        let mut payouts = Vec::new();
        for (&id, acct) in self.accounts.iter_mut() {
            let held: Vec<(MarketId, usize)> = acct.positions.keys().filter(|k| k.0 == market).copied().collect();
            if held.is_empty() {
                continue;
            }
            let amount = CONTRACT_PAYOUT * acct.positions.get(&(market, winning_bin)).copied().unwrap_or(0);
            for k in held {
                acct.positions.remove(&k);
            }
            acct.balance += amount;
            payouts.push(Payout { account: id, amount });
        }
        let settlement = Settlement { market, winning_bin, cancelled, payouts };
        self.markets.get_mut(&market).unwrap().settlement = Some(settlement.clone());
        Ok(settlement)
    }

    pub fn snapshot(&self, market: MarketId) -> Result<BookView, EngineError> {
        let m = self.market(market)?;
        let ladders = m
            .books
            .iter()
            .map(|b| {
                let levels = |side: Side| {
                    let mut out: Vec<Level> = Vec::new();
                    for (price, id) in b.orders(side) {
                        let qty = self.orders[&id].remaining;
                        match out.last_mut() {
                            Some(l) if l.price == price => {
                                l.quantity += qty;
                                l.orders += 1;
                            }
                            _ => out.push(Level { price, quantity: qty, orders: 1 }),
                        }
                    }
                    out
                };
                Ladder { bids: levels(Side::Buy), asks: levels(Side::Sell) }
            })
            .collect();
        let orders = self.orders.values().filter(|o| o.market == market).cloned().collect();
        let skip = m.trades.len().saturating_sub(SNAPSHOT_TRADES);
        Ok(BookView {
            market,
            name: m.name.clone(),
            labels: m.labels.clone(),
            ladders,
            orders,
            last_trades: m.trades[skip..].to_vec(),
            settled: m.settlement.as_ref().map(|s| s.winning_bin),
        })
    }

    pub fn account_view(&self, account: AccountId) -> Result<AccountView, EngineError> {
        let a = self.account(account)?;
        let escrow = self.escrow_of(a, None);
        Ok(AccountView {
            id: account,
            name: a.name.clone(),
            cash: a.balance - escrow,
            escrow,
            positions: a
                .positions
                .iter()
                .map(|(&(market, bin), &quantity)| PositionView { market, bin, quantity })
                .collect(),
            open_orders: a.orders.iter().copied().collect(),
        })
    }

    pub fn ledger(&self) -> Ledger {
        Ledger {
            accounts: self.accounts.keys().map(|&id| self.account_view(id).unwrap()).collect(),
            open_orders: self.orders.values().cloned().collect(),
            fills: self.fills.clone(),
            settlements: self.markets.values().filter_map(|m| m.settlement.clone()).collect(),
        }
    }

    /// Sum of all balances; constant except for settlement transfers, which
    /// are zero-sum themselves.
    pub fn total_balance(&self) -> Cents {
        self.accounts.values().map(|a| a.balance).sum()
    }

    /// Net position in a bin over all accounts; always zero.
    pub fn net_position(&self, market: MarketId, bin: usize) -> i64 {
        self.accounts.values().filter_map(|a| a.positions.get(&(market, bin))).sum()
    }

    /// True if best bid < best ask in every bin of the market.
    pub fn is_uncrossed(&self, market: MarketId) -> Result<bool, EngineError> {
        Ok(self.market(market)?.books.iter().all(|b| match (b.best(Side::Buy), b.best(Side::Sell)) {
            (Some((bid, _)), Some((ask, _))) => bid < ask,
            _ => true,
        }))
    }

    pub fn has_open_orders(&self, market: MarketId) -> Result<bool, EngineError> {
        Ok(!self.market(market)?.books.iter().all(BinBook::is_empty))
    }
}
