//! Exchange, quoting bots and per-market event streams behind one command
//! interface.
//!
//! Every state change goes through [`Venue::apply`]. Successful commands are
//! appended to a journal; applying the same journal to a fresh venue
//! reproduces the ledger and every event stream exactly.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::decision::{Crra, DecisionError};
use crate::engine::{
    AccountId, BookView, Cents, EngineError, Exchange, Fill, MarketId, OrderId, Payout, Settlement, Side, Submission,
};
use crate::maker::{BotCommand, BotState, MakerError, QuoteSet};

/// Upper bound on consecutive requotes triggered by the bot's own orders
/// trading on arrival.
pub const MAX_REQUOTE_ROUNDS: usize = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VenueError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Maker(#[from] MakerError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error("market {0} has no quoting bot")]
    NoBot(MarketId),
    #[error("market {market} was settled on bin {settled}, not {requested}")]
    SettlementConflict { market: MarketId, settled: usize, requested: usize },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BotConfig {
    pub beliefs: Vec<f64>,
    pub cash_cents: Cents,
    #[cfg_attr(feature = "serde", serde(default = "default_rho"))]
    pub rho: f64,
}

#[cfg(feature = "serde")]
fn default_rho() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "type", rename_all = "kebab-case")
)]
pub enum Command {
    CreateMarket { name: String, labels: Vec<String>, bot: Option<BotConfig> },
    OpenAccount { name: String, cash_cents: Cents },
    PlaceOrder { account: AccountId, market: MarketId, bin: usize, side: Side, price_cents: Cents, qty: i64 },
    CancelOrder { account: AccountId, id: OrderId },
    UpdateBeliefs { market: MarketId, p: Vec<f64> },
    Settle { market: MarketId, winning_bin: usize },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "result", rename_all = "kebab-case")
)]
pub enum Outcome {
    MarketCreated { market: MarketId, bot_account: Option<AccountId> },
    AccountOpened { account: AccountId },
    OrderPlaced(Submission),
    OrderCancelled { released_cents: Cents },
    BeliefsUpdated { quotes: QuoteSet },
    Settled(Settlement),
}

/// What the bot saw when it produced a quote set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuoteInputs {
    pub beliefs: Vec<f64>,
    pub cash_cents: Cents,
    pub holdings: Vec<i64>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", content = "payload", rename_all = "UPPERCASE")
)]
pub enum Payload {
    Book(BookView),
    Trade {
        bin: usize,
        price_cents: Cents,
        qty: i64,
        taker_side: Side,
        buyer: AccountId,
        seller: AccountId,
        fill_seq: u64,
    },
    Quotes {
        inputs: QuoteInputs,
        quotes: QuoteSet,
    },
    Beliefs {
        p: Vec<f64>,
    },
    Settled {
        winning_bin: usize,
        payouts: Vec<Payout>,
    },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Book(_) => "BOOK",
            Payload::Trade { .. } => "TRADE",
            Payload::Quotes { .. } => "QUOTES",
            Payload::Beliefs { .. } => "BELIEFS",
            Payload::Settled { .. } => "SETTLED",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Event {
    pub seq: u64,
    pub market: MarketId,
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Venue {
    exchange: Exchange,
    bots: BTreeMap<MarketId, BotState>,
    streams: BTreeMap<MarketId, Vec<Event>>,
    journal: Vec<Command>,
}

impl Venue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exchange(exchange: Exchange) -> Self {
        Self { exchange, ..Self::default() }
    }

    /// Rebuilds a venue by applying a journal to a fresh exchange.
    pub fn replay<'a>(exchange: Exchange, journal: impl IntoIterator<Item = &'a Command>) -> Result<Self, VenueError> {
        let mut v = Self::with_exchange(exchange);
        for cmd in journal {
            v.apply(cmd.clone())?;
        }
        Ok(v)
    }

    pub fn exchange(&self) -> &Exchange {
        &self.exchange
    }

    pub fn journal(&self) -> &[Command] {
        &self.journal
    }

    pub fn bot(&self, market: MarketId) -> Option<&BotState> {
        self.bots.get(&market)
    }

    /// Events of a market from sequence number `from` on.
    pub fn events(&self, market: MarketId, from: u64) -> Result<&[Event], VenueError> {
        let s = self.streams.get(&market).ok_or(EngineError::UnknownMarket(market))?;
        let start = (from as usize).min(s.len());
        Ok(&s[start..])
    }

    pub fn next_seq(&self, market: MarketId) -> Option<u64> {
        self.streams.get(&market).map(|s| s.len() as u64)
    }

    fn emit(&mut self, market: MarketId, payload: Payload) {
        let stream = self.streams.entry(market).or_default();
        let seq = stream.len() as u64;
        stream.push(Event { seq, market, payload });
    }

    fn emit_book(&mut self, market: MarketId) -> Result<(), VenueError> {
        let view = self.exchange.snapshot(market)?;
        self.emit(market, Payload::Book(view));
        Ok(())
    }

    fn emit_trade(&mut self, fill: &Fill) {
        self.emit(
            fill.market,
            Payload::Trade {
                bin: fill.bin,
                price_cents: fill.price,
                qty: fill.quantity,
                taker_side: fill.taker_side,
                buyer: fill.buyer(),
                seller: fill.seller(),
                fill_seq: fill.seq,
            },
        );
    }

    /// Applies a command; on success it is journaled.
    pub fn apply(&mut self, cmd: Command) -> Result<Outcome, VenueError> {
        let outcome = match &cmd {
            Command::CreateMarket { name, labels, bot } => self.create_market(name, labels, bot.as_ref())?,
            Command::OpenAccount { name, cash_cents } => {
                Outcome::AccountOpened { account: self.exchange.open_account(name, *cash_cents)? }
            }
            Command::PlaceOrder { account, market, bin, side, price_cents, qty } => {
                self.place_order(*account, *market, *bin, *side, *price_cents, *qty)?
            }
            Command::CancelOrder { account, id } => {
                let market = self.exchange.order(*id).map(|o| o.market);
                let released = self.exchange.cancel(*account, *id)?;
                if let Some(m) = market {
                    self.emit_book(m)?;
                }
                Outcome::OrderCancelled { released_cents: released }
            }
            Command::UpdateBeliefs { market, p } => self.update_beliefs(*market, p.clone())?,
            Command::Settle { market, winning_bin } => {
                if let Some(s) = self.exchange.settlement(*market)? {
                    // Repeated settlement is answered with the original result.
                    return if s.winning_bin == *winning_bin {
                        Ok(Outcome::Settled(s.clone()))
                    } else {
                        Err(VenueError::SettlementConflict {
                            market: *market,
                            settled: s.winning_bin,
                            requested: *winning_bin,
                        })
                    };
                }
                let s = self.exchange.settle(*market, *winning_bin)?;
                self.bots.remove(market);
                self.emit(*market, Payload::Settled { winning_bin: s.winning_bin, payouts: s.payouts.clone() });
                self.emit_book(*market)?;
                Outcome::Settled(s)
            }
        };
        self.journal.push(cmd);
        Ok(outcome)
    }

    fn create_market(&mut self, name: &str, labels: &[String], bot: Option<&BotConfig>) -> Result<Outcome, VenueError> {
        let bot_name = format!("{name}/maker");
        // Validate everything before mutating so failures leave no trace.
        let utility = match bot {
            Some(cfg) => {
                if cfg.beliefs.len() != labels.len() {
                    return Err(MakerError::WrongLength { expected: labels.len(), got: cfg.beliefs.len() }.into());
                }
                let u = Crra::new(cfg.rho)?;
                BotState::new(AccountId(0), cfg.beliefs.clone(), cfg.cash_cents, u)?;
                if self.exchange.account_id(&bot_name).is_some() {
                    return Err(EngineError::DuplicateName(bot_name).into());
                }
                Some(u)
            }
            None => None,
        };
        let market = self.exchange.create_market(name, labels.to_vec())?;
        self.streams.insert(market, Vec::new());
        let mut bot_account = None;
        if let (Some(cfg), Some(u)) = (bot, utility) {
            let account = self.exchange.open_account(&bot_name, cfg.cash_cents)?;
            self.bots.insert(market, BotState::new(account, cfg.beliefs.clone(), cfg.cash_cents, u)?);
            bot_account = Some(account);
            self.requote(market)?;
        }
        self.emit_book(market)?;
        Ok(Outcome::MarketCreated { market, bot_account })
    }

    fn place_order(
        &mut self,
        account: AccountId,
        market: MarketId,
        bin: usize,
        side: Side,
        price: Cents,
        qty: i64,
    ) -> Result<Outcome, VenueError> {
        let sub = self.exchange.submit(account, market, bin, side, price, qty)?;
        let mut bot_filled = false;
        for f in &sub.fills {
            self.emit_trade(f);
            if let Some(bot) = self.bots.get_mut(&market) {
                bot_filled |= bot.apply_fill(f);
            }
        }
        if bot_filled {
            self.requote(market)?;
        }
        self.emit_book(market)?;
        Ok(Outcome::OrderPlaced(sub))
    }

    fn update_beliefs(&mut self, market: MarketId, p: Vec<f64>) -> Result<Outcome, VenueError> {
        self.exchange.bins(market)?;
        let bot = self.bots.get_mut(&market).ok_or(VenueError::NoBot(market))?;
        bot.on_beliefs(p.clone())?;
        self.emit(market, Payload::Beliefs { p });
        let quotes = self.requote(market)?;
        self.emit_book(market)?;
        Ok(Outcome::BeliefsUpdated { quotes })
    }

    /// Brings the bot's mirror in line with the ledger if it has drifted.
    fn resync(&mut self, market: MarketId) -> Result<(), VenueError> {
        let bot = &self.bots[&market];
        let balance = self.exchange.balance(bot.account)?;
        let holdings: Vec<i64> = (0..bot.bins()).map(|i| self.exchange.position(bot.account, market, i)).collect();
        if !bot.mirror_matches(balance, &holdings) {
            self.bots.get_mut(&market).unwrap().resync(balance, holdings)?;
        }
        Ok(())
    }

    /// Cancel-and-replace until the bot's fresh orders stop trading on
    /// arrival. Orders the exchange refuses for margin or size are skipped.
    fn requote(&mut self, market: MarketId) -> Result<QuoteSet, VenueError> {
        let mut last = QuoteSet::default();
        for _ in 0..MAX_REQUOTE_ROUNDS {
            self.resync(market)?;
            let bot = &self.bots[&market];
            let account = bot.account;
            let inputs = QuoteInputs {
                beliefs: bot.beliefs().to_vec(),
                cash_cents: bot.cash(),
                holdings: bot.holdings().to_vec(),
                rho: bot.utility().rho(),
            };
            let (quotes, commands) = bot.requote()?;
            let mut traded = false;
            for c in commands {
                match c {
                    BotCommand::CancelAll => {
                        self.exchange.cancel_all(account, market)?;
                    }
                    BotCommand::Submit { bin, side, price, quantity } => {
                        match self.exchange.submit(account, market, bin, side, price, quantity) {
                            Ok(sub) => {
                                for f in &sub.fills {
                                    self.emit_trade(f);
                                    traded |= self.bots.get_mut(&market).unwrap().apply_fill(f);
                                }
                            }
                            Err(
                                EngineError::InsufficientMargin { .. }
                                | EngineError::PositionCap(_)
                                | EngineError::SelfTrade(_),
                            ) => {}
                            Err(e) => return Err(e.into()),
                        }
                    }
                }
            }
            self.emit(market, Payload::Quotes { inputs, quotes: quotes.clone() });
            last = quotes;
            if !traded {
                break;
            }
        }
        Ok(last)
    }
}
