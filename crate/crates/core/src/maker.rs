//! The model's market maker.
//!
//! For each bin the bot posts the highest cent price at which it wants to
//! buy at least one whole contract and the lowest at which it wants to sell
//! one, sized by the floor of its expected-utility demand at that price.
//! Any fill or belief change cancels everything and posts a fresh set.

use alloc::vec::Vec;

use crate::decision::{demand_single, Crra, DecisionError};
use crate::engine::{AccountId, Cents, Fill, Side, CONTRACT_PAYOUT, MAX_PRICE, MIN_PRICE};

/// Slack added before flooring demand, so that optima sitting on an integer
/// up to solver precision are not knocked down a contract.
pub const FLOOR_TOLERANCE: f64 = 1e-7;

const BELIEF_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MakerError {
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error("beliefs must be a distribution over at least two bins")]
    InvalidBeliefs,
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("cash must be non-negative")]
    NegativeCash,
    #[error("bin {0} out of range")]
    UnknownBin(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Quote {
    pub price: Cents,
    pub quantity: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BinQuotes {
    pub bid: Option<Quote>,
    pub ask: Option<Quote>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuoteSet {
    pub bins: Vec<BinQuotes>,
}

impl QuoteSet {
    /// Orders to post, bids before asks within each bin.
    pub fn orders(&self) -> Vec<(usize, Side, Quote)> {
        let mut out = Vec::new();
        for (bin, q) in self.bins.iter().enumerate() {
            if let Some(b) = q.bid {
                out.push((bin, Side::Buy, b));
            }
            if let Some(a) = q.ask {
                out.push((bin, Side::Sell, a));
            }
        }
        out
    }
}

/// Instruction the bot issues to the exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BotCommand {
    CancelAll,
    Submit { bin: usize, side: Side, price: Cents, quantity: i64 },
}

fn check_beliefs(p: &[f64]) -> Result<(), MakerError> {
    let sum: f64 = p.iter().sum();
    if p.len() < 2 || p.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > BELIEF_SUM_TOLERANCE {
        return Err(MakerError::InvalidBeliefs);
    }
    Ok(())
}

/// The bot's beliefs and its mirror of its own account.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BotState {
    pub account: AccountId,
    beliefs: Vec<f64>,
    /// Account balance in cents, escrow included.
    cash: Cents,
    holdings: Vec<i64>,
    utility: Crra,
}

impl BotState {
    pub fn new(account: AccountId, beliefs: Vec<f64>, cash: Cents, utility: Crra) -> Result<Self, MakerError> {
        check_beliefs(&beliefs)?;
        if cash < 0 {
            return Err(MakerError::NegativeCash);
        }
        let holdings = alloc::vec![0; beliefs.len()];
        Ok(Self { account, beliefs, cash, holdings, utility })
    }

    pub fn with_holdings(mut self, holdings: Vec<i64>) -> Result<Self, MakerError> {
        if holdings.len() != self.beliefs.len() {
            return Err(MakerError::WrongLength { expected: self.beliefs.len(), got: holdings.len() });
        }
        self.holdings = holdings;
        Ok(self)
    }

    pub fn beliefs(&self) -> &[f64] {
        &self.beliefs
    }

    pub fn cash(&self) -> Cents {
        self.cash
    }

    pub fn holdings(&self) -> &[i64] {
        &self.holdings
    }

    pub fn utility(&self) -> Crra {
        self.utility
    }

    pub fn bins(&self) -> usize {
        self.beliefs.len()
    }

    /// Optimal purchase of `bin` at `price` dollars; negative means sell.
    pub fn demand_at_price(&self, bin: usize, price: f64) -> Result<f64, MakerError> {
        if bin >= self.bins() {
            return Err(MakerError::UnknownBin(bin));
        }
        let holdings: Vec<f64> = self.holdings.iter().map(|&z| z as f64).collect();
        Ok(demand_single(&self.beliefs, self.cash as f64 / 100.0, &holdings, bin, price, &self.utility)?)
    }

    fn whole(&self, bin: usize, cents: Cents, side: Side) -> Result<i64, MakerError> {
        let d = self.demand_at_price(bin, cents as f64 / CONTRACT_PAYOUT as f64)? * side.sign() as f64;
        Ok(libm::floor(d + FLOOR_TOLERANCE) as i64)
    }

    /// Best price on `side`: scans outward from the belief, moving toward
    /// more aggressive prices while demand stays at one contract or more,
    /// otherwise toward more passive prices until it reaches one.
    fn best_quote(&self, bin: usize, side: Side) -> Result<Option<Quote>, MakerError> {
        let start = (libm::round(self.beliefs[bin] * 100.0) as Cents).clamp(MIN_PRICE, MAX_PRICE);
        // Buying is more aggressive at higher prices, selling at lower ones.
        let aggressive = side.sign();
        let in_range = |c: Cents| (MIN_PRICE..=MAX_PRICE).contains(&c);
        let qty = self.whole(bin, start, side)?;
        if qty >= 1 {
            let mut best = Quote { price: start, quantity: qty };
            let mut c = start + aggressive;
            while in_range(c) {
                let q = self.whole(bin, c, side)?;
                if q < 1 {
                    break;
                }
                best = Quote { price: c, quantity: q };
                c += aggressive;
            }
            return Ok(Some(best));
        }
        let mut c = start - aggressive;
        while in_range(c) {
            let q = self.whole(bin, c, side)?;
            if q >= 1 {
                return Ok(Some(Quote { price: c, quantity: q }));
            }
            c -= aggressive;
        }
        Ok(None)
    }

    pub fn quote_set(&self) -> Result<QuoteSet, MakerError> {
        let bins = (0..self.bins())
            .map(|i| Ok(BinQuotes { bid: self.best_quote(i, Side::Buy)?, ask: self.best_quote(i, Side::Sell)? }))
            .collect::<Result<_, MakerError>>()?;
        Ok(QuoteSet { bins })
    }

    /// Cancel-all followed by the fresh quote set.
    pub fn requote(&self) -> Result<(QuoteSet, Vec<BotCommand>), MakerError> {
        let quotes = self.quote_set()?;
        let mut cmds = alloc::vec![BotCommand::CancelAll];
        cmds.extend(quotes.orders().into_iter().map(|(bin, side, q)| BotCommand::Submit {
            bin,
            side,
            price: q.price,
            quantity: q.quantity,
        }));
        Ok((quotes, cmds))
    }

    /// Updates the mirror from a fill. Returns false if the fill does not
    /// concern the bot or is empty.
    pub fn apply_fill(&mut self, fill: &Fill) -> bool {
        if fill.quantity == 0 || !fill.involves(self.account) || fill.bin >= self.bins() {
            return false;
        }
        let notional = fill.price * fill.quantity;
        if fill.buyer() == self.account {
            self.cash -= notional;
            self.holdings[fill.bin] += fill.quantity;
        } else {
            self.cash += notional;
            self.holdings[fill.bin] -= fill.quantity;
        }
        true
    }

    pub fn on_fill(&mut self, fill: &Fill) -> Result<Vec<BotCommand>, MakerError> {
        if !self.apply_fill(fill) {
            return Ok(Vec::new());
        }
        Ok(self.requote()?.1)
    }

    pub fn on_beliefs(&mut self, beliefs: Vec<f64>) -> Result<Vec<BotCommand>, MakerError> {
        check_beliefs(&beliefs)?;
        if beliefs.len() != self.bins() {
            return Err(MakerError::WrongLength { expected: self.bins(), got: beliefs.len() });
        }
        self.beliefs = beliefs;
        Ok(self.requote()?.1)
    }

    pub fn mirror_matches(&self, balance: Cents, holdings: &[i64]) -> bool {
        self.cash == balance && self.holdings == holdings
    }

    /// Replaces the mirror with the exchange's view.
    pub fn resync(&mut self, balance: Cents, holdings: Vec<i64>) -> Result<(), MakerError> {
        if holdings.len() != self.bins() {
            return Err(MakerError::WrongLength { expected: self.bins(), got: holdings.len() });
        }
        if balance < 0 {
            return Err(MakerError::NegativeCash);
        }
        self.cash = balance;
        self.holdings = holdings;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{MarketId, OrderId};
    use alloc::vec;

    fn demo_bot() -> BotState {
        BotState::new(AccountId(0), vec![0.3, 0.5, 0.2], 100_000, Crra::LOG).unwrap()
    }

    fn q(price: Cents, quantity: i64) -> Option<Quote> {
        Some(Quote { price, quantity })
    }

    #[test]
    fn demand_examples() {
        let bot = demo_bot();
        assert!(bot.demand_at_price(0, 0.3).unwrap().abs() < 1e-9);
        assert!((bot.demand_at_price(0, 0.29).unwrap() - 48.567).abs() < 1e-3);
        assert!((bot.demand_at_price(2, 0.21).unwrap() + 60.277).abs() < 1e-3);
        assert!(bot.demand_at_price(0, 1.0).is_err());
        assert_eq!(bot.demand_at_price(3, 0.5), Err(MakerError::UnknownBin(3)));
    }

    #[test]
    fn first_book() {
        let qs = demo_bot().quote_set().unwrap();
        assert_eq!(
            qs.bins,
            vec![
                BinQuotes { bid: q(29, 48), ask: q(31, 46) },
                BinQuotes { bid: q(49, 40), ask: q(51, 40) },
                BinQuotes { bid: q(19, 64), ask: q(21, 60) },
            ]
        );
    }

    #[test]
    fn fill_and_requote() {
        let mut bot = demo_bot();
        let fill = Fill {
            seq: 0,
            market: MarketId(0),
            bin: 0,
            taker_order: OrderId(7),
            maker_order: OrderId(0),
            taker: AccountId(1),
            maker: AccountId(0),
            taker_side: Side::Sell,
            price: 29,
            quantity: 48,
        };
        let cmds = bot.on_fill(&fill).unwrap();
        assert_eq!(bot.cash(), 98_608);
        assert_eq!(bot.holdings(), &[48, 0, 0]);
        assert_eq!(cmds[0], BotCommand::CancelAll);
        assert_eq!(cmds.len(), 7);
        let qs = bot.quote_set().unwrap();
        assert_eq!(qs.bins[0].bid, q(28, 51));
        assert_eq!(qs.bins[0].ask.unwrap().price, 30);
        assert!((qs.bins[0].ask.unwrap().quantity - 47).abs() <= 1);
        assert_eq!(qs.bins[1], BinQuotes { bid: q(50, 28), ask: q(51, 11) });
        assert_eq!(qs.bins[2], BinQuotes { bid: q(20, 17), ask: q(21, 42) });
    }

    #[test]
    fn empty_or_foreign_fill_is_ignored() {
        let mut bot = demo_bot();
        let mut fill = Fill {
            seq: 0,
            market: MarketId(0),
            bin: 0,
            taker_order: OrderId(1),
            maker_order: OrderId(2),
            taker: AccountId(5),
            maker: AccountId(6),
            taker_side: Side::Buy,
            price: 40,
            quantity: 3,
        };
        assert!(bot.on_fill(&fill).unwrap().is_empty());
        fill.maker = AccountId(0);
        fill.quantity = 0;
        assert!(bot.on_fill(&fill).unwrap().is_empty());
        assert_eq!(bot.cash(), 100_000);
    }

    #[test]
    fn uniform_beliefs_are_symmetric() {
        let bot = BotState::new(AccountId(0), vec![0.25; 4], 100_000, Crra::LOG).unwrap();
        let qs = bot.quote_set().unwrap();
        for b in &qs.bins {
            assert_eq!(*b, qs.bins[0]);
            let (bid, ask) = (b.bid.unwrap(), b.ask.unwrap());
            assert!(bid.price < 25 && ask.price > 25);
        }
        let half = BotState::new(AccountId(0), vec![0.5, 0.5], 100_000, Crra::LOG).unwrap().quote_set().unwrap();
        let (bid, ask) = (half.bins[0].bid.unwrap(), half.bins[0].ask.unwrap());
        assert_eq!(bid.price + ask.price, 100);
        assert_eq!(bid.quantity, ask.quantity);
    }

    #[test]
    fn no_budget_no_quotes() {
        let bot = BotState::new(AccountId(0), vec![0.3, 0.5, 0.2], 0, Crra::LOG).unwrap();
        assert!(bot.quote_set().unwrap().orders().is_empty());
        let small = BotState::new(AccountId(0), vec![0.3, 0.5, 0.2], 10, Crra::LOG).unwrap();
        // Ten cents buys or backs at most ten contracts at any cent price.
        assert!(small.quote_set().unwrap().orders().iter().all(|(_, _, q)| q.quantity <= 10));
    }

    #[test]
    fn belief_validation() {
        assert_eq!(BotState::new(AccountId(0), vec![0.3, 0.3], 1, Crra::LOG).unwrap_err(), MakerError::InvalidBeliefs);
        assert_eq!(BotState::new(AccountId(0), vec![1.0], 1, Crra::LOG).unwrap_err(), MakerError::InvalidBeliefs);
        assert_eq!(BotState::new(AccountId(0), vec![0.5, 0.5], -1, Crra::LOG).unwrap_err(), MakerError::NegativeCash);
        let mut bot = demo_bot();
        assert!(bot.on_beliefs(vec![0.5, 0.5]).is_err());
        let before = bot.requote().unwrap();
        let after = bot.on_beliefs(vec![0.3, 0.5, 0.2]).unwrap();
        assert_eq!(before.1, after);
    }

    #[test]
    fn resync_replaces_mirror() {
        let mut bot = demo_bot();
        assert!(bot.mirror_matches(100_000, &[0, 0, 0]));
        bot.resync(98_608, vec![48, 0, 0]).unwrap();
        assert!(bot.mirror_matches(98_608, &[48, 0, 0]));
        assert!(bot.resync(1, vec![0]).is_err());
    }
}
