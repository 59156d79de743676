//! Daily replay of model beliefs against market prices.
//!
//! Each state is traded independently with its own budget. On every date
//! the bot computes its optimal holding change for the single event
//! contract at that day's fill price and is filled in full. All accounting
//! is fixed-point so that cash identities hold exactly.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::date::Date;
use crate::decision::{optimal_trades, Beliefs, Crra, DecisionError, Matrix, Portfolio, PriceBoard};
use crate::fixed::{Mills, Money, Price, Quantity};
use crate::panel::{AlignedPanel, AlignedRecord, OutcomeTable, StateCode};

/// Largest number of close states searched exhaustively.
pub const MAX_CLOSE_STATES: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BacktestError {
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error("fill price {0} outside (0, 1)")]
    PriceOutOfRange(f64),
    #[error("belief {0} outside [0, 1]")]
    BadBelief(f64),
    #[error("initial cash must be positive")]
    NonPositiveCash,
    #[error("position is insolvent")]
    Insolvent,
    #[error("series lengths differ: {0} dates, {1} beliefs, {2} prices")]
    Misaligned(usize, usize, usize),
    #[error("unknown state {0}")]
    UnknownState(StateCode),
    #[error("state {0} has no total vote count; closeness as a fraction needs it")]
    MissingTotalVotes(StateCode),
    #[error("{0} close states exceed the exhaustive search limit")]
    TooManyCloseStates(usize),
}

/// How the daily fill price is derived from the two contract closes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum FillPolicy {
    /// Mean of the Democratic close and one minus the Republican close.
    #[default]
    AverageOfCloses,
    DemClose,
    RepComplement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum QuantityMode {
    /// Micro-contract resolution.
    #[default]
    Continuous,
    WholeContracts,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestConfig {
    pub initial_cash: Money,
    pub utility: Crra,
    pub fill: FillPolicy,
    pub quantity: QuantityMode,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            initial_cash: Money::from_dollars(1000.0),
            utility: Crra::LOG,
            fill: FillPolicy::default(),
            quantity: QuantityMode::default(),
        }
    }
}

fn check_price(price: Mills) -> Result<(), BacktestError> {
    if price.0 <= 0 || price >= Mills::ONE_DOLLAR {
        Err(BacktestError::PriceOutOfRange(price.to_dollars()))
    } else {
        Ok(())
    }
}

/// The mean of the two contract-implied prices of the Democratic event.
pub fn event_price(dem_yes: Mills, rep_yes: Mills) -> Result<Price, BacktestError> {
    check_price(dem_yes)?;
    check_price(rep_yes)?;
    // (dem + (1 - rep)) / 2 on the mill grid is a multiple of half a mill.
    Ok(Price(5 * (dem_yes.0 + Mills::ONE_DOLLAR.0 - rep_yes.0)))
}

pub fn fill_price(policy: FillPolicy, dem_yes: Mills, rep_yes: Mills) -> Result<Price, BacktestError> {
    match policy {
        FillPolicy::AverageOfCloses => event_price(dem_yes, rep_yes),
        FillPolicy::DemClose => {
            check_price(dem_yes)?;
            Ok(dem_yes.to_price())
        }
        FillPolicy::RepComplement => {
            check_price(rep_yes)?;
            Ok((Mills(Mills::ONE_DOLLAR.0 - rep_yes.0)).to_price())
        }
    }
}

/// Cash and holdings of the event contract in one state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Position {
    pub cash: Money,
    pub contracts: Quantity,
}

impl Position {
    pub fn cash_only(cash: Money) -> Self {
        Self { cash, contracts: Quantity::ZERO }
    }

    /// Cash plus holdings valued at `price`.
    pub fn value(&self, price: Price) -> Money {
        self.cash + price.cost(self.contracts)
    }

    /// Terminal wealth once the event resolves.
    pub fn payoff(&self, occurred: bool) -> Money {
        if occurred {
            self.cash + self.contracts.payout()
        } else {
            self.cash
        }
    }

    pub fn is_solvent(&self) -> bool {
        self.payoff(true) >= Money::ZERO && self.payoff(false) >= Money::ZERO
    }
}

/// One day's trade: returns the quantity bought (negative: sold) and the
/// resulting position.
pub fn step(
    position: Position,
    belief: f64,
    price: Price,
    config: &BacktestConfig,
) -> Result<(Quantity, Position), BacktestError> {
    if !(0.0..=1.0).contains(&belief) {
        return Err(BacktestError::BadBelief(belief));
    }
    if price.0 <= 0 || price >= Price::ONE_DOLLAR {
        return Err(BacktestError::PriceOutOfRange(price.to_dollars()));
    }
    if !position.is_solvent() {
        return Err(BacktestError::Insolvent);
    }
    let q = price.to_dollars();
    let portfolio =
        Portfolio::pooled(position.cash.to_dollars(), Matrix::column_vector(&[position.contracts.to_contracts(), 0.0]));
    let board = PriceBoard::single(2, 1, 0, 0, q)?;
    let plan = optimal_trades(&portfolio, &board, &Beliefs::binary(belief)?, &config.utility)?;
    let real = plan.get(0, 0);
    let mut trade = match config.quantity {
        QuantityMode::Continuous => Quantity::from_real_toward_zero(real),
        QuantityMode::WholeContracts => Quantity::whole_toward_zero(real),
    };
    let unit = match config.quantity {
        QuantityMode::Continuous => 1,
        QuantityMode::WholeContracts => Quantity::from_contracts(1).0,
    };
    loop {
        let next = Position { cash: position.cash - price.cost(trade), contracts: position.contracts + trade };
        if next.is_solvent() || trade.is_zero() {
            return Ok((trade, next));
        }
        // Solver noise at the boundary; back off one grid step.
        trade = Quantity(trade.0 - trade.0.signum() * unit);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrajectoryRow {
    pub date: Date,
    pub belief: f64,
    pub price: Price,
    pub trade: Quantity,
    pub cash: Money,
    pub contracts: Quantity,
    /// Mark-to-market value after the trade.
    pub value: Money,
}

pub type Trajectory = Vec<TrajectoryRow>;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateResult {
    pub state: StateCode,
    pub occurred: bool,
    pub initial_cash: Money,
    pub cash: Money,
    pub contracts: Quantity,
    /// Value at the last fill price, before resolution.
    pub value: Money,
    pub payoff: Money,
    pub profit: Money,
    pub return_rate: f64,
}

fn rate(profit: Money, base: Money) -> f64 {
    profit.to_dollars() / base.to_dollars()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyInput {
    pub date: Date,
    pub belief: f64,
    pub dem_yes: Mills,
    pub rep_yes: Mills,
}

impl From<&AlignedRecord> for DailyInput {
    fn from(r: &AlignedRecord) -> Self {
        Self { date: r.date, belief: r.p_model, dem_yes: r.dem_yes, rep_yes: r.rep_yes }
    }
}

/// Runs one state's series from the configured starting cash.
pub fn run_state(
    state: StateCode,
    series: &[DailyInput],
    occurred: bool,
    config: &BacktestConfig,
) -> Result<(Trajectory, StateResult), BacktestError> {
    if config.initial_cash <= Money::ZERO {
        return Err(BacktestError::NonPositiveCash);
    }
    let mut position = Position::cash_only(config.initial_cash);
    let mut trajectory = Vec::with_capacity(series.len());
    let mut last_price = None;
    for day in series {
        let price = fill_price(config.fill, day.dem_yes, day.rep_yes)?;
        let (trade, next) = step(position, day.belief, price, config)?;
        position = next;
        last_price = Some(price);
        trajectory.push(TrajectoryRow {
            date: day.date,
            belief: day.belief,
            price,
            trade,
            cash: position.cash,
            contracts: position.contracts,
            value: position.value(price),
        });
    }
    let payoff = position.payoff(occurred);
    let profit = payoff - config.initial_cash;
    let result = StateResult {
        state,
        occurred,
        initial_cash: config.initial_cash,
        cash: position.cash,
        contracts: position.contracts,
        value: last_price.map_or(position.cash, |p| position.value(p)),
        payoff,
        profit,
        return_rate: rate(profit, config.initial_cash),
    };
    Ok((trajectory, result))
}

/// Runs separate date, belief and price vectors.
pub fn run_state_series(
    state: StateCode,
    dates: &[Date],
    beliefs: &[f64],
    prices: &[(Mills, Mills)],
    occurred: bool,
    config: &BacktestConfig,
) -> Result<(Trajectory, StateResult), BacktestError> {
    if dates.len() != beliefs.len() || dates.len() != prices.len() {
        return Err(BacktestError::Misaligned(dates.len(), beliefs.len(), prices.len()));
    }
    let series: Vec<DailyInput> = dates
        .iter()
        .zip(beliefs)
        .zip(prices)
        .map(|((&date, &belief), &(dem_yes, rep_yes))| DailyInput { date, belief, dem_yes, rep_yes })
        .collect();
    run_state(state, &series, occurred, config)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Totals {
    pub initial_cash: Money,
    pub value: Money,
    pub payoff: Money,
    pub profit: Money,
    pub return_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateRun {
    pub result: StateResult,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelReport {
    pub states: Vec<StateRun>,
    pub totals: Totals,
}

impl PanelReport {
    pub fn result(&self, state: StateCode) -> Option<&StateResult> {
        self.states.iter().map(|s| &s.result).find(|r| r.state == state)
    }

    fn totals_with(&self, flipped: &BTreeSet<StateCode>) -> Totals {
        let mut t = Totals {
            initial_cash: Money::ZERO,
            value: Money::ZERO,
            payoff: Money::ZERO,
            profit: Money::ZERO,
            return_rate: 0.0,
        };
        for r in self.states.iter().map(|s| &s.result) {
            let occurred = r.occurred ^ flipped.contains(&r.state);
            let payoff = Position { cash: r.cash, contracts: r.contracts }.payoff(occurred);
            t.initial_cash += r.initial_cash;
            t.value += r.value;
            t.payoff += payoff;
        }
        t.profit = t.payoff - t.initial_cash;
        t.return_rate = if t.initial_cash > Money::ZERO { rate(t.profit, t.initial_cash) } else { 0.0 };
        t
    }
}

/// Backtests every state of the panel with partitioned cash.
pub fn run_panel(panel: &AlignedPanel, config: &BacktestConfig) -> Result<PanelReport, BacktestError> {
    let mut states = Vec::with_capacity(panel.n_states());
    for (si, &state) in panel.states().iter().enumerate() {
        let records = panel.series(si);
        let series: Vec<DailyInput> = records.iter().map(DailyInput::from).collect();
        let occurred = records.first().is_some_and(|r| r.r);
        let (trajectory, result) = run_state(state, &series, occurred, config)?;
        states.push(StateRun { result, trajectory });
    }
    let mut report = PanelReport {
        states,
        totals: Totals {
            initial_cash: Money::ZERO,
            value: Money::ZERO,
            payoff: Money::ZERO,
            profit: Money::ZERO,
            return_rate: 0.0,
        },
    };
    report.totals = report.totals_with(&BTreeSet::new());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlipScenario {
    pub flipped: Vec<StateCode>,
    /// Sum of the flipped states' vote margins.
    pub margin_votes: u64,
    pub payoff: Money,
    pub profit: Money,
    pub return_rate: f64,
}

/// Recomputes payoffs with the listed states' resolutions reversed. Holdings
/// are unchanged because every trade happened before resolution.
pub fn flip_analysis(
    report: &PanelReport,
    outcomes: &OutcomeTable,
    flip_sets: &[Vec<StateCode>],
) -> Result<Vec<FlipScenario>, BacktestError> {
    flip_sets
        .iter()
        .map(|set| {
            let mut margin = 0u64;
            for &s in set {
                if report.result(s).is_none() {
                    return Err(BacktestError::UnknownState(s));
                }
                margin += outcomes.get(s).ok_or(BacktestError::UnknownState(s))?.margin_votes;
            }
            let flipped: BTreeSet<StateCode> = set.iter().copied().collect();
            let t = report.totals_with(&flipped);
            Ok(FlipScenario {
                flipped: set.clone(),
                margin_votes: margin,
                payoff: t.payoff,
                profit: t.profit,
                return_rate: t.return_rate,
            })
        })
        .collect()
}

/// What counts as a close state.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Closeness {
    /// Winning margin below this fraction of votes cast.
    Fraction(f64),
    /// Winning margin below this many votes.
    Votes(u64),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Robustness {
    pub close_states: Vec<StateCode>,
    /// Fewest close-state flips producing a total loss; `None` when no
    /// combination does.
    pub diameter: Option<usize>,
    pub smallest_set: Vec<StateCode>,
    /// Fewest votes whose reversal produces a total loss.
    pub min_flipped_votes: Option<u64>,
    pub cheapest_set: Vec<StateCode>,
}

pub fn robustness_diameter(
    report: &PanelReport,
    outcomes: &OutcomeTable,
    closeness: Closeness,
) -> Result<Robustness, BacktestError> {
    let mut close = Vec::new();
    for r in report.states.iter().map(|s| &s.result) {
        let row = outcomes.get(r.state).ok_or(BacktestError::UnknownState(r.state))?;
        let is_close = match closeness {
            Closeness::Votes(v) => row.margin_votes < v,
            Closeness::Fraction(f) => row.margin_fraction().ok_or(BacktestError::MissingTotalVotes(r.state))? < f,
        };
        if is_close {
            close.push((r.state, row.margin_votes));
        }
    }
    if close.len() > MAX_CLOSE_STATES {
        return Err(BacktestError::TooManyCloseStates(close.len()));
    }

    let mut best_size: Option<(usize, u64, Vec<StateCode>)> = None;
    let mut best_votes: Option<(u64, usize, Vec<StateCode>)> = None;
    for mask in 1u32..(1u32 << close.len()) {
        let members: Vec<(StateCode, u64)> =
            (0..close.len()).filter(|b| mask & (1 << b) != 0).map(|b| close[b]).collect();
        let flipped: BTreeSet<StateCode> = members.iter().map(|m| m.0).collect();
        if report.totals_with(&flipped).profit >= Money::ZERO {
            continue;
        }
        let size = members.len();
        let votes: u64 = members.iter().map(|m| m.1).sum();
        let set: Vec<StateCode> = members.iter().map(|m| m.0).collect();
        if best_size.as_ref().is_none_or(|b| (size, votes) < (b.0, b.1)) {
            best_size = Some((size, votes, set.clone()));
        }
        if best_votes.as_ref().is_none_or(|b| (votes, size) < (b.0, b.1)) {
            best_votes = Some((votes, size, set));
        }
    }
    Ok(Robustness {
        close_states: close.iter().map(|c| c.0).collect(),
        diameter: best_size.as_ref().map(|b| b.0),
        smallest_set: best_size.map(|b| b.2).unwrap_or_default(),
        min_flipped_votes: best_votes.as_ref().map(|b| b.0),
        cheapest_set: best_votes.map(|b| b.2).unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::binary_log_closed_form;
    use crate::panel::{OutcomeRow, Winner};
    use alloc::vec;

    fn m(d: f64) -> Mills {
        Mills::from_dollars(d).unwrap()
    }

    fn st(s: &str) -> StateCode {
        s.parse().unwrap()
    }

    #[test]
    fn event_price_examples() {
        assert_eq!(event_price(m(0.70), m(0.30)).unwrap(), Price(7000));
        assert_eq!(event_price(m(0.70), m(0.33)).unwrap(), Price(6850));
        assert_eq!(event_price(m(0.5), m(0.5)).unwrap(), Price(5000));
        assert!(event_price(Mills(0), m(0.5)).is_err());
        assert!(event_price(m(0.5), Mills(1000)).is_err());
        assert_eq!(fill_price(FillPolicy::RepComplement, m(0.70), m(0.33)).unwrap(), Price(6700));
        assert_eq!(fill_price(FillPolicy::DemClose, m(0.70), m(0.33)).unwrap(), Price(7000));
    }

    #[test]
    fn step_at_belief_is_flat() {
        let cfg = BacktestConfig::default();
        let start = Position::cash_only(cfg.initial_cash);
        let (x, next) = step(start, 0.4, Price(4000), &cfg).unwrap();
        assert!(x.is_zero());
        assert_eq!(next, start);
    }

    #[test]
    fn step_opens_short_when_belief_below_price() {
        let cfg = BacktestConfig::default();
        let (x, next) = step(Position::cash_only(cfg.initial_cash), 0.4, Price(5500), &cfg).unwrap();
        assert!(x.0 < 0);
        assert!(next.cash > cfg.initial_cash);
    }

    #[test]
    fn step_matches_oracle_and_cash_identity() {
        let cfg = BacktestConfig::default();
        let start = Position::cash_only(cfg.initial_cash);
        let (x, next) = step(start, 0.3, Price(2900), &cfg).unwrap();
        let oracle = binary_log_closed_form(0.3, 0.29, 1000.0, 0.0).unwrap();
        assert!((x.to_contracts() - oracle).abs() <= 1e-6 + 1e-6 * oracle);
        assert_eq!(next.cash, start.cash - Price(2900).cost(x));
        assert!((next.cash.to_dollars() - 985.9155).abs() < 1e-3);
        assert_eq!(next.value(Price(2900)), start.value(Price(2900)));
    }

    #[test]
    fn whole_contract_mode_floors() {
        let cfg = BacktestConfig { quantity: QuantityMode::WholeContracts, ..BacktestConfig::default() };
        let (x, _) = step(Position::cash_only(cfg.initial_cash), 0.3, Price(2900), &cfg).unwrap();
        assert_eq!(x, Quantity::from_contracts(48));
    }

    fn flat_series(days: usize, p: f64) -> Vec<DailyInput> {
        let mut date: Date = "2020-04-01".parse().unwrap();
        (0..days)
            .map(|_| {
                let d = DailyInput { date, belief: p, dem_yes: m(p), rep_yes: m(1.0 - p) };
                date = date.succ();
                d
            })
            .collect()
    }

    #[test]
    fn flat_series_has_zero_profit() {
        let cfg = BacktestConfig::default();
        let (traj, res) = run_state(st("WI"), &flat_series(10, 0.62), true, &cfg).unwrap();
        assert!(traj.iter().all(|r| r.trade.is_zero() && r.value == cfg.initial_cash));
        assert_eq!(res.profit, Money::ZERO);
        assert_eq!(res.payoff, cfg.initial_cash);
    }

    #[test]
    fn misaligned_series_error() {
        let d: Date = "2020-04-01".parse().unwrap();
        let err = run_state_series(st("WI"), &[d], &[0.5, 0.5], &[(m(0.5), m(0.5))], true, &BacktestConfig::default());
        assert_eq!(err.unwrap_err(), BacktestError::Misaligned(1, 2, 1));
    }

    fn two_state_report() -> (PanelReport, OutcomeTable) {
        let mut records = Vec::new();
        let mut date: Date = "2020-10-01".parse().unwrap();
        for day in 0..5 {
            for (state, belief, dem, rep, r) in
                [("AZ", 0.7, 0.5, 0.52, true), ("GA", 0.35 + 0.01 * day as f64, 0.45, 0.57, false)]
            {
                records.push(AlignedRecord {
                    date,
                    state: st(state),
                    p_model: belief,
                    p_market: dem / (dem + rep),
                    dem_yes: m(dem),
                    rep_yes: m(rep),
                    r,
                });
            }
            date = date.succ();
        }
        let panel = AlignedPanel::from_records(records).unwrap();
        let report = run_panel(&panel, &BacktestConfig::default()).unwrap();
        let outcomes = OutcomeTable::new([
            OutcomeRow { state: st("AZ"), winner: Winner::Dem, margin_votes: 10_458, total_votes: Some(3_387_326) },
            OutcomeRow { state: st("GA"), winner: Winner::Rep, margin_votes: 11_779, total_votes: Some(4_997_716) },
        ])
        .unwrap();
        (report, outcomes)
    }

    #[test]
    fn panel_totals_are_sums() {
        let (report, _) = two_state_report();
        let payoff = report.states.iter().fold(Money::ZERO, |a, s| a + s.result.payoff);
        assert_eq!(report.totals.payoff, payoff);
        assert_eq!(report.totals.initial_cash, Money::from_dollars(2000.0));
        assert_eq!(report.totals.profit, payoff - Money::from_dollars(2000.0));
    }

    #[test]
    fn flips() {
        let (report, outcomes) = two_state_report();
        let rows = flip_analysis(&report, &outcomes, &[vec![], vec![st("AZ")], vec![st("AZ"), st("GA")]]).unwrap();
        assert_eq!(rows[0].payoff, report.totals.payoff);
        let az = report.result(st("AZ")).unwrap();
        assert!(az.contracts.0 > 0);
        assert_eq!(rows[1].payoff, report.totals.payoff - az.contracts.payout());
        assert_eq!(rows[2].margin_votes, 10_458 + 11_779);
        assert!(matches!(flip_analysis(&report, &outcomes, &[vec![st("WI")]]), Err(BacktestError::UnknownState(_))));
    }

    #[test]
    fn robustness_without_loss_is_infinite() {
        let (report, outcomes) = two_state_report();
        // Nothing is close under a tiny threshold.
        let r = robustness_diameter(&report, &outcomes, Closeness::Votes(100)).unwrap();
        assert!(r.close_states.is_empty());
        assert_eq!(r.diameter, None);
        assert_eq!(r.min_flipped_votes, None);
    }

    #[test]
    fn robustness_finds_cheapest_loss() {
        let (report, outcomes) = two_state_report();
        let r = robustness_diameter(&report, &outcomes, Closeness::Fraction(0.01)).unwrap();
        assert_eq!(r.close_states, vec![st("AZ"), st("GA")]);
        // Brute force over the three non-empty subsets.
        let mut best: Option<(usize, u64)> = None;
        for set in [vec![st("AZ")], vec![st("GA")], vec![st("AZ"), st("GA")]] {
            let row = &flip_analysis(&report, &outcomes, core::slice::from_ref(&set)).unwrap()[0];
            if row.profit < Money::ZERO {
                let cand = (set.len(), row.margin_votes);
                best = Some(best.map_or(cand, |b| b.min(cand)));
            }
        }
        assert_eq!(r.diameter, best.map(|b| b.0));
    }
}
