//! Expected-utility trading over event contracts.
//!
//! An outcome assigns a unique winning candidate (row) to every
//! jurisdiction (column). A contract on candidate `i` in jurisdiction `j`
//! pays one dollar when `i` wins `j`. Holdings `Z` and trades `X` are
//! `n x m` matrices; buying at price `q` lowers cash by `q` per contract.

mod closed_form;
mod solver;
mod utility;

use alloc::vec;
use alloc::vec::Vec;

pub use closed_form::binary_log_closed_form;
pub use solver::{demand_single, optimal_trades, optimal_trades_with, Solution, SolverOptions};
pub use utility::{crra, Crra};

/// Largest outcome space enumerated explicitly for pooled cash.
pub const MAX_JOINT_OUTCOMES: usize = 1 << 20;

const PROBABILITY_TOLERANCE: f64 = 1e-9;
/// Slack allowed when checking solvency of a supplied plan.
pub const SOLVENCY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecisionError {
    #[error("risk aversion {0} must be finite and non-negative")]
    BadRiskAversion(f64),
    #[error("utility undefined at wealth {wealth} for rho = {rho}")]
    UtilityDomain { wealth: f64, rho: f64 },
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("column {0} is not one-hot")]
    NotOneHot(usize),
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("invalid probability {0}")]
    BadProbability(f64),
    #[error("price {0} outside [0, 1]")]
    BadPrice(f64),
    #[error("price {0} is degenerate; traded prices must lie strictly inside (0, 1)")]
    DegeneratePrice(f64),
    #[error(
        "listed prices in jurisdiction {jurisdiction} sum to {sum}; a riskless basket makes the problem unbounded"
    )]
    Arbitrage { jurisdiction: usize, sum: f64 },
    #[error("plan is insolvent: worst-case wealth {0}")]
    Insolvent(f64),
    #[error("outcome space of {0} states is too large without partitioned cash")]
    OutcomeSpaceTooLarge(usize),
    #[error("no convergence after {sweeps} sweeps (last step {last_step:e}, gradient norm {gradient_norm:e})")]
    NoConvergence { sweeps: usize, last_step: f64, gradient_norm: f64 },
}

/// Dense `rows x cols` matrix stored column by column.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self, DecisionError> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(DecisionError::Shape("ragged columns"));
        }
        Ok(Self { rows, cols: columns.len(), data: columns.concat() })
    }

    /// A single column.
    pub fn column_vector(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { data: self.data.iter().map(|v| v * factor).collect(), ..self.clone() }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(libm::fabs(*v)))
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// An outcome realization: the winning candidate of each jurisdiction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeMatrix {
    candidates: usize,
    winners: Vec<usize>,
}

impl OutcomeMatrix {
    pub fn from_winners(candidates: usize, winners: Vec<usize>) -> Result<Self, DecisionError> {
        if let Some(j) = winners.iter().position(|&w| w >= candidates) {
            return Err(DecisionError::NotOneHot(j));
        }
        Ok(Self { candidates, winners })
    }

    /// Validates a 0/1 matrix whose columns each contain a single 1.
    pub fn from_indicator(s: &Matrix) -> Result<Self, DecisionError> {
        let mut winners = Vec::with_capacity(s.cols());
        for j in 0..s.cols() {
            let col = s.column(j);
            if col.iter().any(|&v| v != 0.0 && v != 1.0) || col.iter().filter(|&&v| v == 1.0).count() != 1 {
                return Err(DecisionError::NotOneHot(j));
            }
            winners.push(col.iter().position(|&v| v == 1.0).unwrap_or(0));
        }
        Ok(Self { candidates: s.rows(), winners })
    }

    pub fn to_indicator(&self) -> Matrix {
        let mut s = Matrix::zeros(self.candidates, self.winners.len());
        for (j, &w) in self.winners.iter().enumerate() {
            s.set(w, j, 1.0);
        }
        s
    }

    pub fn winner(&self, j: usize) -> usize {
        self.winners[j]
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

/// A probability distribution over outcomes.
#[derive(Debug, Clone, PartialEq)]
pub enum Beliefs {
    /// Explicit probabilities for listed outcomes; unlisted outcomes have
    /// probability zero.
    Joint { candidates: usize, jurisdictions: usize, outcomes: Vec<(Vec<usize>, f64)> },
    /// Independent per-jurisdiction distributions, one column each.
    Marginals(Matrix),
}

fn check_probability(p: f64) -> Result<(), DecisionError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(DecisionError::BadProbability(p))
    }
}

fn check_sum(sum: f64) -> Result<(), DecisionError> {
    if libm::fabs(sum - 1.0) <= PROBABILITY_TOLERANCE {
        Ok(())
    } else {
        Err(DecisionError::NotNormalized(sum))
    }
}

impl Beliefs {
    pub fn joint(
        candidates: usize,
        jurisdictions: usize,
        outcomes: Vec<(Vec<usize>, f64)>,
    ) -> Result<Self, DecisionError> {
        let mut sum = 0.0;
        for (winners, p) in &outcomes {
            check_probability(*p)?;
            if winners.len() != jurisdictions {
                return Err(DecisionError::Shape("outcome length differs from jurisdiction count"));
            }
            OutcomeMatrix::from_winners(candidates, winners.clone())?;
            sum += p;
        }
        check_sum(sum)?;
        Ok(Beliefs::Joint { candidates, jurisdictions, outcomes })
    }

    pub fn marginals(columns: Matrix) -> Result<Self, DecisionError> {
        for j in 0..columns.cols() {
            let col = columns.column(j);
            for &p in col {
                check_probability(p)?;
            }
            check_sum(col.iter().sum())?;
        }
        Ok(Beliefs::Marginals(columns))
    }

    /// One binary event with probability `p`, as candidates (event, not event).
    pub fn binary(p: f64) -> Result<Self, DecisionError> {
        check_probability(p)?;
        Ok(Beliefs::Marginals(Matrix::column_vector(&[p, 1.0 - p])))
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Beliefs::Joint { candidates, jurisdictions, .. } => (*candidates, *jurisdictions),
            Beliefs::Marginals(m) => (m.rows(), m.cols()),
        }
    }

    /// Marginal distribution of jurisdiction `j`.
    pub fn marginal(&self, j: usize) -> Vec<f64> {
        match self {
            Beliefs::Marginals(m) => m.column(j).to_vec(),
            Beliefs::Joint { candidates, outcomes, .. } => {
                let mut out = vec![0.0; *candidates];
                for (w, p) in outcomes {
                    out[w[j]] += p;
                }
                out
            }
        }
    }

    /// Positive-probability outcomes over the jurisdictions in `cols`.
    fn scenarios(&self, cols: &[usize]) -> Result<Vec<Scenario>, DecisionError> {
        match self {
            Beliefs::Joint { outcomes, .. } if cols.len() == self.shape().1 => Ok(outcomes
                .iter()
                .filter(|(_, p)| *p > 0.0)
                .map(|(w, p)| Scenario { winners: w.clone(), prob: *p })
                .collect()),
            Beliefs::Joint { .. } if cols.len() == 1 => Ok(self
                .marginal(cols[0])
                .into_iter()
                .enumerate()
                .filter(|(_, p)| *p > 0.0)
                .map(|(i, p)| Scenario { winners: vec![i], prob: p })
                .collect()),
            Beliefs::Joint { .. } => Err(DecisionError::Shape("joint beliefs split across blocks")),
            Beliefs::Marginals(m) => {
                let mut size: usize = 1;
                for _ in cols {
                    size = size.saturating_mul(m.rows());
                }
                if size > MAX_JOINT_OUTCOMES {
                    return Err(DecisionError::OutcomeSpaceTooLarge(size));
                }
                let mut out = vec![Scenario { winners: Vec::with_capacity(cols.len()), prob: 1.0 }];
                for &j in cols {
                    let col = m.column(j);
                    let mut next = Vec::with_capacity(out.len() * col.len());
                    for s in &out {
                        for (i, &p) in col.iter().enumerate() {
                            if p > 0.0 {
                                let mut winners = s.winners.clone();
                                winners.push(i);
                                next.push(Scenario { winners, prob: s.prob * p });
                            }
                        }
                    }
                    out = next;
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Scenario {
    /// Winner per jurisdiction of the block, in block column order.
    winners: Vec<usize>,
    prob: f64,
}

/// Contract prices; `None` marks a contract that cannot be traded.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceBoard {
    candidates: usize,
    jurisdictions: usize,
    prices: Vec<Option<f64>>,
}

impl PriceBoard {
    pub fn new(candidates: usize, jurisdictions: usize, prices: Vec<Option<f64>>) -> Result<Self, DecisionError> {
        if prices.len() != candidates * jurisdictions {
            return Err(DecisionError::Shape("price count differs from n * m"));
        }
        for q in prices.iter().flatten() {
            if !(0.0..=1.0).contains(q) {
                return Err(DecisionError::BadPrice(*q));
            }
        }
        Ok(Self { candidates, jurisdictions, prices })
    }

    /// Every contract listed.
    pub fn full(q: &Matrix) -> Result<Self, DecisionError> {
        Self::new(q.rows(), q.cols(), q.values().iter().map(|&v| Some(v)).collect())
    }

    /// Only contract `(i, j)` is listed.
    pub fn single(candidates: usize, jurisdictions: usize, i: usize, j: usize, q: f64) -> Result<Self, DecisionError> {
        let mut prices = vec![None; candidates * jurisdictions];
        prices[j * candidates + i] = Some(q);
        Self::new(candidates, jurisdictions, prices)
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.prices[j * self.candidates + i]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.candidates, self.jurisdictions)
    }
}

/// How cash is held across jurisdictions.
#[derive(Debug, Clone, PartialEq)]
pub enum Cash {
    /// One budget backs every jurisdiction.
    Pooled(f64),
    /// A separate budget per jurisdiction; each must stay solvent alone.
    Partitioned(Vec<f64>),
}

impl Cash {
    pub fn total(&self) -> f64 {
        match self {
            Cash::Pooled(y) => *y,
            Cash::Partitioned(ys) => ys.iter().sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    pub cash: Cash,
    pub holdings: Matrix,
}

impl Portfolio {
    pub fn pooled(y: f64, holdings: Matrix) -> Self {
        Self { cash: Cash::Pooled(y), holdings }
    }

    pub fn partitioned(cash: Vec<f64>, holdings: Matrix) -> Self {
        Self { cash: Cash::Partitioned(cash), holdings }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let cash = match &self.cash {
            Cash::Pooled(y) => Cash::Pooled(y * factor),
            Cash::Partitioned(ys) => Cash::Partitioned(ys.iter().map(|y| y * factor).collect()),
        };
        Self { cash, holdings: self.holdings.scaled(factor) }
    }

    fn shape(&self) -> (usize, usize) {
        (self.holdings.rows(), self.holdings.cols())
    }

    /// Jurisdiction groups sharing a budget, with that budget.
    fn blocks(&self) -> Result<Vec<(f64, Vec<usize>)>, DecisionError> {
        let m = self.holdings.cols();
        match &self.cash {
            Cash::Pooled(y) => Ok(vec![(*y, (0..m).collect())]),
            Cash::Partitioned(ys) if ys.len() == m => Ok(ys.iter().enumerate().map(|(j, &y)| (y, vec![j])).collect()),
            Cash::Partitioned(_) => Err(DecisionError::Shape("one cash entry per jurisdiction required")),
        }
    }
}

/// Contracts bought (negative: sold) per candidate and jurisdiction.
#[derive(Debug, Clone, PartialEq)]
pub struct TradePlan(pub Matrix);

impl TradePlan {
    pub fn none(candidates: usize, jurisdictions: usize) -> Self {
        TradePlan(Matrix::zeros(candidates, jurisdictions))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }
}

/// Cash plus the payout of winning contracts.
pub fn terminal_wealth(portfolio: &Portfolio, outcome: &OutcomeMatrix) -> f64 {
    portfolio.cash.total()
        + outcome.winners().iter().enumerate().map(|(j, &w)| portfolio.holdings.get(w, j)).sum::<f64>()
}

/// Post-trade value of column `j` if candidate `l` wins it, excluding cash:
/// `z_lj + x_lj - q_j' x_j`.
fn column_values(portfolio: &Portfolio, plan: &TradePlan, prices: &PriceBoard, j: usize) -> Vec<f64> {
    let n = portfolio.holdings.rows();
    let spend: f64 = (0..n).map(|i| prices.get(i, j).unwrap_or(0.0) * plan.get(i, j)).sum();
    (0..n).map(|l| portfolio.holdings.get(l, j) + plan.get(l, j) - spend).collect()
}

fn check_shapes(portfolio: &Portfolio, plan: &TradePlan, prices: &PriceBoard) -> Result<(), DecisionError> {
    if !portfolio.holdings.same_shape(&plan.0) || portfolio.shape() != prices.shape() {
        return Err(DecisionError::Shape("portfolio, plan and prices must share n x m"));
    }
    for j in 0..prices.jurisdictions {
        for i in 0..prices.candidates {
            if prices.get(i, j).is_none() && plan.get(i, j) != 0.0 {
                return Err(DecisionError::Shape("plan trades an unlisted contract"));
            }
        }
    }
    Ok(())
}

fn column_minimum(values: &[f64]) -> f64 {
    values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
}

/// Worst-case post-trade wealth of each budget block.
pub fn worst_case_by_block(
    portfolio: &Portfolio,
    plan: &TradePlan,
    prices: &PriceBoard,
) -> Result<Vec<f64>, DecisionError> {
    check_shapes(portfolio, plan, prices)?;
    Ok(portfolio
        .blocks()?
        .into_iter()
        .map(|(cash, cols)| {
            cash + cols.iter().map(|&j| column_minimum(&column_values(portfolio, plan, prices, j))).sum::<f64>()
        })
        .collect())
}

/// Minimum post-trade terminal wealth over every possible outcome.
///
/// Columns are independent in the outcome space, so the minimum is the
/// sum of per-column minima.
pub fn worst_case(portfolio: &Portfolio, plan: &TradePlan, prices: &PriceBoard) -> Result<f64, DecisionError> {
    Ok(worst_case_by_block(portfolio, plan, prices)?.iter().sum())
}

pub fn is_solvent(portfolio: &Portfolio, plan: &TradePlan, prices: &PriceBoard) -> Result<bool, DecisionError> {
    Ok(worst_case_by_block(portfolio, plan, prices)?.iter().all(|&w| w >= -SOLVENCY_TOLERANCE))
}

fn check_beliefs(portfolio: &Portfolio, beliefs: &Beliefs) -> Result<(), DecisionError> {
    if beliefs.shape() != portfolio.shape() {
        return Err(DecisionError::Shape("beliefs must match portfolio n x m"));
    }
    Ok(())
}

/// Expected utility of the post-trade portfolio.
pub fn expected_utility(
    portfolio: &Portfolio,
    plan: &TradePlan,
    prices: &PriceBoard,
    beliefs: &Beliefs,
    utility: &Crra,
) -> Result<f64, DecisionError> {
    check_beliefs(portfolio, beliefs)?;
    if let Some(&w) = worst_case_by_block(portfolio, plan, prices)?.iter().find(|&&w| w < -SOLVENCY_TOLERANCE) {
        return Err(DecisionError::Insolvent(w));
    }
    let mut total = 0.0;
    for (cash, cols) in portfolio.blocks()? {
        let values: Vec<Vec<f64>> = cols.iter().map(|&j| column_values(portfolio, plan, prices, j)).collect();
        for s in beliefs.scenarios(&cols)? {
            let w = cash + s.winners.iter().enumerate().map(|(k, &i)| values[k][i]).sum::<f64>();
            total += s.prob * utility.value(w)?;
        }
    }
    Ok(total)
}

/// Gradient of [`expected_utility`] with respect to each trade; entries of
/// unlisted contracts are zero.
pub fn gradient(
    portfolio: &Portfolio,
    plan: &TradePlan,
    prices: &PriceBoard,
    beliefs: &Beliefs,
    utility: &Crra,
) -> Result<Matrix, DecisionError> {
    check_beliefs(portfolio, beliefs)?;
    check_shapes(portfolio, plan, prices)?;
    let (n, m) = portfolio.shape();
    let mut grad = Matrix::zeros(n, m);
    for (cash, cols) in portfolio.blocks()? {
        let values: Vec<Vec<f64>> = cols.iter().map(|&j| column_values(portfolio, plan, prices, j)).collect();
        for s in beliefs.scenarios(&cols)? {
            let w = cash + s.winners.iter().enumerate().map(|(k, &i)| values[k][i]).sum::<f64>();
            if w <= 0.0 && utility.rho() > 0.0 {
                return Err(DecisionError::UtilityDomain { wealth: w, rho: utility.rho() });
            }
            let mu = s.prob * utility.marginal(w);
            for (k, &j) in cols.iter().enumerate() {
                for i in 0..n {
                    if let Some(q) = prices.get(i, j) {
                        let payoff = if s.winners[k] == i { 1.0 } else { 0.0 };
                        grad.set(i, j, grad.get(i, j) + mu * (payoff - q));
                    }
                }
            }
        }
    }
    Ok(grad)
}
