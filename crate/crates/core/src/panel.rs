//! Forecast, price and outcome panels and their alignment.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::date::Date;
use crate::fixed::Mills;

/// Two-letter jurisdiction code such as `WI`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateCode([u8; 2]);

impl StateCode {
    pub fn as_str(&self) -> &str {
        // Always two ASCII uppercase letters.
        core::str::from_utf8(&self.0).unwrap_or("??")
    }
}

impl FromStr for StateCode {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().as_bytes();
        if t.len() == 2 && t.iter().all(|b| b.is_ascii_alphabetic()) {
            Ok(StateCode([t[0].to_ascii_uppercase(), t[1].to_ascii_uppercase()]))
        } else {
            Err(PanelError::BadState(s.into()))
        }
    }
}

impl fmt::Display for StateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for StateCode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for StateCode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "UPPERCASE"))]
pub enum Winner {
    Dem,
    Rep,
}

impl Winner {
    pub fn resolution(self) -> bool {
        matches!(self, Winner::Dem)
    }

    pub fn flipped(self) -> Self {
        match self {
            Winner::Dem => Winner::Rep,
            Winner::Rep => Winner::Dem,
        }
    }
}

impl FromStr for Winner {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "DEM" => Ok(Winner::Dem),
            "REP" => Ok(Winner::Rep),
            other => Err(PanelError::BadWinner(other.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Side {
    Model,
    Market,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gap {
    pub date: Date,
    pub state: StateCode,
    /// The source that lacks the record.
    pub missing_from: Side,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PanelError {
    #[error("invalid state code `{0}`")]
    BadState(String),
    #[error("invalid winner `{0}` (expected DEM or REP)")]
    BadWinner(String),
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("price {0} outside (0, 1)")]
    PriceOutOfRange(f64),
    #[error("prices must be non-negative with a positive sum, got ({0}, {1})")]
    ZeroSum(f64, f64),
    #[error("duplicate record for {state} on {date}")]
    Duplicate { date: Date, state: StateCode },
    #[error("duplicate outcome row for {0}")]
    DuplicateOutcome(StateCode),
    #[error("no outcome for state {0}")]
    MissingOutcome(StateCode),
    #[error("{} gaps between model and market, first: {} on {} missing from {:?}", .0.len(), .0[0].state, .0[0].date, .0[0].missing_from)]
    Gaps(Vec<Gap>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastEntry {
    pub date: Date,
    pub state: StateCode,
    pub p: f64,
}

/// Model probabilities of a Democratic win, keyed by (date, state).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForecastPanel {
    entries: BTreeMap<(Date, StateCode), f64>,
}

impl ForecastPanel {
    pub fn new(entries: impl IntoIterator<Item = ForecastEntry>) -> Result<Self, PanelError> {
        let mut panel = Self::default();
        for e in entries {
            panel.insert(e)?;
        }
        Ok(panel)
    }

    pub fn insert(&mut self, e: ForecastEntry) -> Result<(), PanelError> {
        if !(0.0..=1.0).contains(&e.p) {
            return Err(PanelError::ProbabilityOutOfRange(e.p));
        }
        if self.entries.insert((e.date, e.state), e.p).is_some() {
            return Err(PanelError::Duplicate { date: e.date, state: e.state });
        }
        Ok(())
    }

    pub fn get(&self, date: Date, state: StateCode) -> Option<f64> {
        self.entries.get(&(date, state)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ForecastEntry> + '_ {
        self.entries.iter().map(|(&(date, state), &p)| ForecastEntry { date, state, p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriceEntry {
    pub date: Date,
    pub state: StateCode,
    pub dem_yes: Mills,
    pub rep_yes: Mills,
}

/// Daily closing prices of the Democratic and Republican contracts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PricePanel {
    entries: BTreeMap<(Date, StateCode), (Mills, Mills)>,
}

impl PricePanel {
    pub fn new(entries: impl IntoIterator<Item = PriceEntry>) -> Result<Self, PanelError> {
        let mut panel = Self::default();
        for e in entries {
            panel.insert(e)?;
        }
        Ok(panel)
    }

    pub fn insert(&mut self, e: PriceEntry) -> Result<(), PanelError> {
        for price in [e.dem_yes, e.rep_yes] {
            if price.0 <= 0 || price >= Mills::ONE_DOLLAR {
                return Err(PanelError::PriceOutOfRange(price.to_dollars()));
            }
        }
        if self.entries.insert((e.date, e.state), (e.dem_yes, e.rep_yes)).is_some() {
            return Err(PanelError::Duplicate { date: e.date, state: e.state });
        }
        Ok(())
    }

    pub fn get(&self, date: Date, state: StateCode) -> Option<(Mills, Mills)> {
        self.entries.get(&(date, state)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = PriceEntry> + '_ {
        self.entries.iter().map(|(&(date, state), &(dem_yes, rep_yes))| PriceEntry { date, state, dem_yes, rep_yes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OutcomeRow {
    pub state: StateCode,
    pub winner: Winner,
    pub margin_votes: u64,
    /// Total votes cast, when known; needed for percentage closeness.
    pub total_votes: Option<u64>,
}

impl OutcomeRow {
    /// Winning margin as a fraction of votes cast.
    pub fn margin_fraction(&self) -> Option<f64> {
        self.total_votes.filter(|&t| t > 0).map(|t| self.margin_votes as f64 / t as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutcomeTable {
    rows: BTreeMap<StateCode, OutcomeRow>,
}

impl OutcomeTable {
    pub fn new(rows: impl IntoIterator<Item = OutcomeRow>) -> Result<Self, PanelError> {
        let mut table = Self::default();
        for row in rows {
            table.insert(row)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, row: OutcomeRow) -> Result<(), PanelError> {
        if self.rows.insert(row.state, row).is_some() {
            return Err(PanelError::DuplicateOutcome(row.state));
        }
        Ok(())
    }

    pub fn get(&self, state: StateCode) -> Option<&OutcomeRow> {
        self.rows.get(&state)
    }

    pub fn iter(&self) -> impl Iterator<Item = &OutcomeRow> {
        self.rows.values()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Scales a pair of complementary contract prices into a probability for
/// the first contract's event.
pub fn normalize_pair(dem_yes: f64, rep_yes: f64) -> Result<f64, PanelError> {
    let sum = dem_yes + rep_yes;
    if !(dem_yes >= 0.0 && rep_yes >= 0.0 && sum > 0.0 && sum.is_finite()) {
        return Err(PanelError::ZeroSum(dem_yes, rep_yes));
    }
    Ok(dem_yes / sum)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedRecord {
    pub date: Date,
    pub state: StateCode,
    pub p_model: f64,
    pub p_market: f64,
    pub dem_yes: Mills,
    pub rep_yes: Mills,
    /// True when the Democrat won the state.
    pub r: bool,
}

/// A rectangular states x dates panel of model and market forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPanel {
    states: Vec<StateCode>,
    dates: Vec<Date>,
    /// Row-major by state: `records[s * n_days + d]`.
    records: Vec<AlignedRecord>,
}

impl AlignedPanel {
    /// Builds a panel from complete records. Every (state, date) pair of the
    /// implied rectangle must be present exactly once.
    pub fn from_records(records: impl IntoIterator<Item = AlignedRecord>) -> Result<Self, PanelError> {
        let mut map = BTreeMap::new();
        for r in records {
            if !(0.0..=1.0).contains(&r.p_model) {
                return Err(PanelError::ProbabilityOutOfRange(r.p_model));
            }
            if !(0.0..=1.0).contains(&r.p_market) {
                return Err(PanelError::ProbabilityOutOfRange(r.p_market));
            }
            if map.insert((r.state, r.date), r).is_some() {
                return Err(PanelError::Duplicate { date: r.date, state: r.state });
            }
        }
        let states: Vec<StateCode> = map.keys().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect();
        let dates: Vec<Date> = map.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect();
        let mut gaps = Vec::new();
        for &s in &states {
            for &d in &dates {
                if !map.contains_key(&(s, d)) {
                    gaps.push(Gap { date: d, state: s, missing_from: Side::Model });
                }
            }
        }
        if !gaps.is_empty() {
            return Err(PanelError::Gaps(gaps));
        }
        Ok(Self { states, dates, records: map.into_values().collect() })
    }

    pub fn states(&self) -> &[StateCode] {
        &self.states
    }

    pub fn dates(&self) -> &[Date] {
        &self.dates
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[AlignedRecord] {
        &self.records
    }

    /// The time series of one state, in date order.
    pub fn series(&self, state_index: usize) -> &[AlignedRecord] {
        let n = self.dates.len();
        &self.records[state_index * n..(state_index + 1) * n]
    }

    /// All states' records on one date, in state order.
    pub fn on_date(&self, date_index: usize) -> impl Iterator<Item = &AlignedRecord> + '_ {
        let n = self.dates.len();
        (0..self.states.len()).map(move |s| &self.records[s * n + date_index])
    }

    pub fn date_index(&self, date: Date) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn state_index(&self, state: StateCode) -> Option<usize> {
        self.states.binary_search(&state).ok()
    }
}

/// Joins model forecasts, market prices and outcomes into a rectangular
/// panel over the dates both sources cover.
///
/// A date is kept when both sources have at least one record on it. Within
/// kept dates every state must appear in both sources; holes are reported,
/// never filled.
pub fn align(model: &ForecastPanel, market: &PricePanel, outcomes: &OutcomeTable) -> Result<AlignedPanel, PanelError> {
    let model_dates: BTreeSet<Date> = model.entries.keys().map(|k| k.0).collect();
    let market_dates: BTreeSet<Date> = market.entries.keys().map(|k| k.0).collect();
    let dates: Vec<Date> = model_dates.intersection(&market_dates).copied().collect();

    let states: BTreeSet<StateCode> = model.entries.keys().chain(market.entries.keys()).map(|k| k.1).collect();
    for &s in &states {
        if outcomes.get(s).is_none() {
            return Err(PanelError::MissingOutcome(s));
        }
    }

    let mut gaps = Vec::new();
    let mut records = Vec::with_capacity(states.len() * dates.len());
    for &state in &states {
        let r = outcomes.get(state).map(|o| o.winner.resolution()).unwrap_or(false);
        for &date in &dates {
            let p_model = model.get(date, state);
            let prices = market.get(date, state);
            match (p_model, prices) {
                (Some(p_model), Some((dem_yes, rep_yes))) => {
                    let p_market = normalize_pair(dem_yes.to_dollars(), rep_yes.to_dollars())?;
                    records.push(AlignedRecord { date, state, p_model, p_market, dem_yes, rep_yes, r });
                }
                (None, _) => gaps.push(Gap { date, state, missing_from: Side::Model }),
                (_, None) => gaps.push(Gap { date, state, missing_from: Side::Market }),
            }
        }
    }
    if !gaps.is_empty() {
        return Err(PanelError::Gaps(gaps));
    }
    Ok(AlignedPanel { states: states.into_iter().collect(), dates, records })
}
