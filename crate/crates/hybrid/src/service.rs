//! The exchange service state: a venue behind a mutex, bearer tokens, and an
//! append-only JSONL journal that is replayed on startup.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Mutex, MutexGuard};

use hybrid_core::engine::{
    AccountId, AccountView, BookView, Cents, EngineError, Exchange, Ledger, MarketId, OrderId, Side,
};
use hybrid_core::venue::{BotConfig, Command, Event, Outcome, Venue, VenueError};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::manifest::sha256_hex;

/// Probabilities on the wire carry at most this many decimal places.
pub const BELIEF_DECIMALS: i32 = 6;

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub admin_token: String,
    pub event_log: Option<PathBuf>,
    pub position_cap: Option<i64>,
    /// Seed a demo market with a quoting bot when the journal is empty.
    pub demo: bool,
}

/// A request as clients send it; the acting account comes from the token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Request {
    CreateMarket {
        name: String,
        labels: Vec<String>,
        #[serde(default)]
        bot: Option<BotConfig>,
    },
    OpenAccount {
        name: String,
        cash_cents: Cents,
    },
    PlaceOrder {
        market: MarketId,
        bin: usize,
        side: Side,
        price_cents: Cents,
        qty: i64,
    },
    CancelOrder {
        id: OrderId,
    },
    UpdateBeliefs {
        market: MarketId,
        p: Vec<f64>,
    },
    Settle {
        market: MarketId,
        winning_bin: usize,
    },
    GetBook {
        market: MarketId,
    },
    GetPositions {},
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Response {
    Outcome(Outcome),
    Opened { result: &'static str, account: AccountId, token: String },
    Book(BookView),
    Positions(AccountView),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    BadRequest,
    Unauthorized,
    Forbidden,
    NotFound,
    Conflict,
    Unprocessable,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct ServiceError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ServiceError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

impl From<VenueError> for ServiceError {
    fn from(e: VenueError) -> Self {
        use EngineError as E;
        let kind = match &e {
            VenueError::Engine(E::UnknownAccount(_) | E::UnknownMarket(_) | E::UnknownOrder(_)) => ErrorKind::NotFound,
            VenueError::Engine(E::NotOwner(_)) => ErrorKind::Forbidden,
            VenueError::Engine(E::DuplicateName(_) | E::AlreadySettled(_) | E::MarketSettled(_))
            | VenueError::SettlementConflict { .. } => ErrorKind::Conflict,
            VenueError::NoBot(_) => ErrorKind::NotFound,
            _ => ErrorKind::Unprocessable,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<io::Error> for ServiceError {
    fn from(e: io::Error) -> Self {
        Self::new(ErrorKind::Internal, format!("journal: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "kebab-case")]
enum JournalEntry {
    Config {
        position_cap: Option<i64>,
    },
    Command {
        command: Command,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token_sha256: Option<String>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error("demo setup failed: {0}")]
    Demo(ServiceError),
}

struct Inner {
    venue: Venue,
    /// sha256(token) to account.
    tokens: HashMap<String, AccountId>,
    journal: Option<File>,
}

pub struct Service {
    admin_token_sha256: String,
    inner: Mutex<Inner>,
    notify: watch::Sender<u64>,
    closed: AtomicBool,
}

fn new_token() -> String {
    let mut bytes = [0u8; 32];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

fn check_beliefs(p: &[f64]) -> Result<(), ServiceError> {
    let scale = 10f64.powi(BELIEF_DECIMALS);
    for &x in p {
        if !x.is_finite() || ((x * scale).round() - x * scale).abs() > 1e-6 {
            return Err(ServiceError::new(
                ErrorKind::Unprocessable,
                format!("probability {x} has more than {BELIEF_DECIMALS} decimal places"),
            ));
        }
    }
    Ok(())
}

fn read_journal(path: &Path) -> Result<Vec<JournalEntry>, StartupError> {
    let display = path.display().to_string();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(StartupError::Io { path: display, source }),
    };
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| StartupError::Io { path: display.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| StartupError::Corrupt {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

impl Service {
    /// Opens the service, replaying the journal if one exists. The position
    /// cap recorded in an existing journal wins over the configured one.
    pub fn open(config: &ServiceConfig) -> Result<Self, StartupError> {
        let mut cap = config.position_cap;
        let mut venue = None;
        let mut tokens = HashMap::new();
        let mut journal = None;
        if let Some(path) = &config.event_log {
            let display = path.display().to_string();
            let entries = read_journal(path)?;
            let corrupt = |line: usize, message: String| StartupError::Corrupt { path: display.clone(), line, message };
            let mut it = entries.into_iter().enumerate();
            match it.next() {
                Some((_, JournalEntry::Config { position_cap })) => cap = position_cap,
                Some((i, _)) => return Err(corrupt(i + 1, "journal must start with a config entry".into())),
                None => {}
            }
            let mut v = Venue::with_exchange(exchange(cap));
            for (i, entry) in it {
                let JournalEntry::Command { command, token_sha256 } = entry else {
                    return Err(corrupt(i + 1, "config entry after the first line".into()));
                };
                let outcome = v.apply(command).map_err(|e| corrupt(i + 1, e.to_string()))?;
                if let (Outcome::AccountOpened { account }, Some(h)) = (outcome, token_sha256) {
                    tokens.insert(h, account);
                }
            }
            let needs_header = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| StartupError::Io { path: display.clone(), source })?;
            if needs_header {
                let line =
                    serde_json::to_string(&JournalEntry::Config { position_cap: cap }).expect("config serializes");
                writeln!(file, "{line}")
                    .and_then(|_| file.flush())
                    .map_err(|source| StartupError::Io { path: display, source })?;
            }
            venue = Some(v);
            journal = Some(file);
        }
        let venue = venue.unwrap_or_else(|| Venue::with_exchange(exchange(cap)));
        let empty = venue.journal().is_empty();
        let service = Self {
            admin_token_sha256: sha256_hex(config.admin_token.as_bytes()),
            inner: Mutex::new(Inner { venue, tokens, journal }),
            notify: watch::channel(0).0,
            closed: AtomicBool::new(false),
        };
        if config.demo && empty {
            service.seed_demo().map_err(StartupError::Demo)?;
        }
        Ok(service)
    }

    fn seed_demo(&self) -> Result<(), ServiceError> {
        let mut inner = self.lock();
        let cmd = Command::CreateMarket {
            name: "demo".into(),
            labels: vec!["Low".into(), "Middle".into(), "High".into()],
            bot: Some(BotConfig { beliefs: vec![0.3, 0.5, 0.2], cash_cents: 100_000, rho: 1.0 }),
        };
        self.commit(&mut inner, cmd, None).map(drop)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // A panic mid-command cannot leave the venue half-updated in a way the
        // journal disagrees with, since journaling follows a successful apply.
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn is_admin(&self, bearer: Option<&str>) -> bool {
        bearer.is_some_and(|t| sha256_hex(t.as_bytes()) == self.admin_token_sha256)
    }

    fn require_admin(&self, bearer: Option<&str>) -> Result<(), ServiceError> {
        match bearer {
            None => Err(ServiceError::new(ErrorKind::Unauthorized, "missing bearer token")),
            Some(_) if self.is_admin(bearer) => Ok(()),
            Some(_) => Err(ServiceError::new(ErrorKind::Forbidden, "admin token required")),
        }
    }

    fn account(inner: &Inner, bearer: Option<&str>) -> Result<AccountId, ServiceError> {
        let token = bearer.ok_or_else(|| ServiceError::new(ErrorKind::Unauthorized, "missing bearer token"))?;
        inner
            .tokens
            .get(&sha256_hex(token.as_bytes()))
            .copied()
            .ok_or_else(|| ServiceError::new(ErrorKind::Unauthorized, "unknown token"))
    }

    fn commit(&self, inner: &mut Inner, cmd: Command, token_sha256: Option<String>) -> Result<Outcome, ServiceError> {
        let outcome = inner.venue.apply(cmd.clone())?;
        if let Some(file) = inner.journal.as_mut() {
            let line = serde_json::to_string(&JournalEntry::Command { command: cmd, token_sha256 })
                .map_err(|e| ServiceError::new(ErrorKind::Internal, e.to_string()))?;
            writeln!(file, "{line}")?;
            file.flush()?;
        }
        self.notify.send_modify(|n| *n += 1);
        Ok(outcome)
    }

    /// Executes one request for the holder of `bearer`.
    pub fn execute(&self, bearer: Option<&str>, req: Request) -> Result<Response, ServiceError> {
        let mut inner = self.lock();
        let inner = &mut *inner;
        let outcome = match req {
            Request::CreateMarket { name, labels, bot } => {
                self.require_admin(bearer)?;
                if let Some(b) = &bot {
                    check_beliefs(&b.beliefs)?;
                }
                self.commit(inner, Command::CreateMarket { name, labels, bot }, None)?
            }
            Request::UpdateBeliefs { market, p } => {
                self.require_admin(bearer)?;
                check_beliefs(&p)?;
                self.commit(inner, Command::UpdateBeliefs { market, p }, None)?
            }
            Request::Settle { market, winning_bin } => {
                self.require_admin(bearer)?;
                self.commit(inner, Command::Settle { market, winning_bin }, None)?
            }
            Request::OpenAccount { name, cash_cents } => {
                let token = new_token();
                let hash = sha256_hex(token.as_bytes());
                let outcome = self.commit(inner, Command::OpenAccount { name, cash_cents }, Some(hash.clone()))?;
                let Outcome::AccountOpened { account } = outcome else { unreachable!("open-account outcome") };
                inner.tokens.insert(hash, account);
                return Ok(Response::Opened { result: "account-opened", account, token });
            }
            Request::PlaceOrder { market, bin, side, price_cents, qty } => {
                let account = Self::account(inner, bearer)?;
                self.commit(inner, Command::PlaceOrder { account, market, bin, side, price_cents, qty }, None)?
            }
            Request::CancelOrder { id } => {
                let account = Self::account(inner, bearer)?;
                self.commit(inner, Command::CancelOrder { account, id }, None)?
            }
            Request::GetBook { market } => return Ok(Response::Book(snapshot(&inner.venue, market)?)),
            Request::GetPositions {} => {
                let account = Self::account(inner, bearer)?;
                let view = inner.venue.exchange().account_view(account).map_err(VenueError::from)?;
                return Ok(Response::Positions(view));
            }
        };
        Ok(Response::Outcome(outcome))
    }

    pub fn book(&self, market: MarketId) -> Result<BookView, ServiceError> {
        snapshot(&self.lock().venue, market)
    }

    pub fn markets(&self) -> Vec<MarketSummary> {
        let inner = self.lock();
        let ex = inner.venue.exchange();
        ex.market_ids()
            .into_iter()
            .filter_map(|id| {
                let view = ex.snapshot(id).ok()?;
                Some(MarketSummary {
                    id,
                    name: view.name,
                    labels: view.labels,
                    settled: view.settled,
                    has_bot: inner.venue.bot(id).is_some(),
                })
            })
            .collect()
    }

    pub fn ledger(&self, bearer: Option<&str>) -> Result<Ledger, ServiceError> {
        self.require_admin(bearer)?;
        Ok(self.lock().venue.exchange().ledger())
    }

    /// Events of `market` with sequence number at least `from`.
    pub fn events(&self, market: MarketId, from: u64) -> Result<Vec<Event>, ServiceError> {
        Ok(self.lock().venue.events(market, from)?.to_vec())
    }

    /// Changes whenever a command is committed.
    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.notify.subscribe()
    }

    /// Ends event streams; commands still work.
    pub fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.notify.send_modify(|n| *n += 1);
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// Flushes the journal to stable storage.
    pub fn sync(&self) -> io::Result<()> {
        match self.lock().journal.as_ref() {
            Some(f) => f.sync_data(),
            None => Ok(()),
        }
    }

    pub fn journal_len(&self) -> usize {
        self.lock().venue.journal().len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketSummary {
    pub id: MarketId,
    pub name: String,
    pub labels: Vec<String>,
    pub settled: Option<usize>,
    pub has_bot: bool,
}

fn exchange(cap: Option<i64>) -> Exchange {
    cap.map_or_else(Exchange::new, Exchange::with_position_cap)
}

fn snapshot(venue: &Venue, market: MarketId) -> Result<BookView, ServiceError> {
    Ok(venue.exchange().snapshot(market).map_err(VenueError::from)?)
}
