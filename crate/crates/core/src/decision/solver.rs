//! Cyclic coordinate ascent with a bisection line search on each
//! coordinate's derivative.
//!
//! Along any single trade the post-trade wealth of every outcome is affine,
//! so the objective restricted to a coordinate is concave and its derivative
//! is monotone. The feasible segment of each coordinate comes from the
//! worst-case solvency constraint, shrunk by a small dollar margin so that
//! wealth stays strictly positive for log and stronger risk aversion.

use alloc::vec::Vec;

use super::{Beliefs, Crra, DecisionError, Portfolio, PriceBoard, Scenario, TradePlan, SOLVENCY_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_sweeps: usize,
    /// Converged when every coordinate moves less than `step_tolerance * scale`.
    pub step_tolerance: f64,
    /// Worst-case wealth kept in reserve, as `feasibility_margin * scale`.
    pub feasibility_margin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_sweeps: 10_000, step_tolerance: 1e-10, feasibility_margin: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub plan: TradePlan,
    pub sweeps: usize,
    /// Infinity norm of the gradient, ignoring components that push against
    /// an active solvency bound.
    pub projected_gradient_norm: f64,
}

struct Block {
    cash: f64,
    cols: Vec<usize>,
    scenarios: Vec<Scenario>,
    wealth: Vec<f64>,
    /// Per block column: value of the column if each candidate wins.
    values: Vec<Vec<f64>>,
}

impl Block {
    /// `1 + |cash| + max |holding|`: the size of the numbers in play, which
    /// sets how finely steps and bounds can be resolved.
    fn scale(&self) -> f64 {
        let holdings = self.values.iter().flatten().fold(0.0f64, |m, &v| m.max(libm::fabs(v)));
        1.0 + libm::fabs(self.cash) + holdings
    }

    fn new(cash: f64, cols: Vec<usize>, scenarios: Vec<Scenario>, values: Vec<Vec<f64>>) -> Self {
        let wealth = scenarios
            .iter()
            .map(|s| cash + s.winners.iter().enumerate().map(|(k, &i)| values[k][i]).sum::<f64>())
            .collect();
        Self { cash, cols, scenarios, wealth, values }
    }

    /// Feasible range of a step `t` on trade `(i, k)` at price `q`.
    fn bounds(&self, i: usize, k: usize, q: f64, margin: f64) -> (f64, f64) {
        let others: f64 = self
            .values
            .iter()
            .enumerate()
            .filter(|(kk, _)| *kk != k)
            .map(|(_, v)| v.iter().fold(f64::INFINITY, |m, &x| m.min(x)))
            .sum();
        let base = self.cash + others;
        let col = &self.values[k];
        let losers = col.iter().enumerate().filter(|(l, _)| *l != i).fold(f64::INFINITY, |m, (_, &x)| m.min(x));
        let lo = (margin - base - col[i]) / (1.0 - q);
        let hi = (base + losers - margin) / q;
        (lo, hi)
    }

    fn slope(&self, i: usize, k: usize, q: f64, t: f64, u: &Crra) -> f64 {
        self.scenarios
            .iter()
            .zip(&self.wealth)
            .map(|(s, &w)| {
                let coef = if s.winners[k] == i { 1.0 - q } else { -q };
                s.prob * u.marginal(w + coef * t) * coef
            })
            .sum()
    }

    fn best_step(&self, i: usize, k: usize, q: f64, u: &Crra, margin: f64) -> f64 {
        let (lo, hi) = self.bounds(i, k, q, margin);
        if lo.partial_cmp(&hi).is_none_or(|o| o.is_gt()) {
            return 0.0;
        }
        let g_lo = self.slope(i, k, q, lo, u);
        let g_hi = self.slope(i, k, q, hi, u);
        if g_lo <= 0.0 && g_hi >= 0.0 {
            // Flat objective along this coordinate.
            return 0.0f64.clamp(lo, hi);
        }
        if g_lo <= 0.0 {
            return lo;
        }
        if g_hi >= 0.0 {
            return hi;
        }
        let (mut a, mut b) = (lo, hi);
        for _ in 0..400 {
            let mid = 0.5 * (a + b);
            if !(mid > a && mid < b) {
                break;
            }
            let g = self.slope(i, k, q, mid, u);
            if g > 0.0 {
                a = mid;
            } else if g < 0.0 {
                b = mid;
            } else {
                return mid;
            }
        }
        0.5 * (a + b)
    }

    fn apply(&mut self, i: usize, k: usize, q: f64, t: f64) {
        for (l, v) in self.values[k].iter_mut().enumerate() {
            *v += if l == i { (1.0 - q) * t } else { -q * t };
        }
        for (s, w) in self.scenarios.iter().zip(self.wealth.iter_mut()) {
            *w += if s.winners[k] == i { (1.0 - q) * t } else { -q * t };
        }
    }

    fn at_bound(&self, i: usize, k: usize, q: f64, margin: f64, g: f64) -> bool {
        let (lo, hi) = self.bounds(i, k, q, margin);
        let slack = 1e-9 * (1.0 + libm::fabs(lo).max(libm::fabs(hi)));
        (g < 0.0 && lo >= -slack) || (g > 0.0 && hi <= slack)
    }
}

fn validate_prices(prices: &PriceBoard) -> Result<(), DecisionError> {
    let (n, m) = prices.shape();
    for j in 0..m {
        let mut listed = 0;
        let mut sum = 0.0;
        for i in 0..n {
            if let Some(q) = prices.get(i, j) {
                if !(q > 0.0 && q < 1.0) {
                    return Err(DecisionError::DegeneratePrice(q));
                }
                listed += 1;
                sum += q;
            }
        }
        if listed == n && libm::fabs(sum - 1.0) > 1e-12 {
            return Err(DecisionError::Arbitrage { jurisdiction: j, sum });
        }
    }
    Ok(())
}

/// Expected-utility maximizing trades subject to worst-case solvency.
pub fn optimal_trades(
    portfolio: &Portfolio,
    prices: &PriceBoard,
    beliefs: &Beliefs,
    utility: &Crra,
) -> Result<TradePlan, DecisionError> {
    optimal_trades_with(portfolio, prices, beliefs, utility, &SolverOptions::default()).map(|s| s.plan)
}

pub fn optimal_trades_with(
    portfolio: &Portfolio,
    prices: &PriceBoard,
    beliefs: &Beliefs,
    utility: &Crra,
    options: &SolverOptions,
) -> Result<Solution, DecisionError> {
    let (n, m) = portfolio.shape();
    super::check_beliefs(portfolio, beliefs)?;
    if prices.shape() != (n, m) {
        return Err(DecisionError::Shape("prices must match portfolio n x m"));
    }
    validate_prices(prices)?;
    let none = TradePlan::none(n, m);
    if let Some(&w) = super::worst_case_by_block(portfolio, &none, prices)?.iter().find(|&&w| w < -SOLVENCY_TOLERANCE) {
        return Err(DecisionError::Insolvent(w));
    }

    let mut plan = TradePlan::none(n, m);
    let mut sweeps_used = 0;
    let mut gradient_norm: f64 = 0.0;
    for (cash, cols) in portfolio.blocks()? {
        let values = cols.iter().map(|&j| (0..n).map(|i| portfolio.holdings.get(i, j)).collect()).collect();
        let scenarios = beliefs.scenarios(&cols)?;
        let mut block = Block::new(cash, cols, scenarios, values);
        let coords: Vec<(usize, usize, f64)> = block
            .cols
            .iter()
            .enumerate()
            .flat_map(|(k, &j)| (0..n).filter_map(move |i| prices.get(i, j).map(|q| (i, k, q))))
            .collect();
        if coords.is_empty() {
            continue;
        }
        let scale = block.scale();
        let tolerance = options.step_tolerance * scale;
        let margin = options.feasibility_margin * scale;
        let mut converged = false;
        let mut last_step = 0.0;
        for sweep in 1..=options.max_sweeps {
            last_step = 0.0f64;
            for &(i, k, q) in &coords {
                let t = block.best_step(i, k, q, utility, margin);
                if t != 0.0 {
                    block.apply(i, k, q, t);
                    let j = block.cols[k];
                    plan.0.set(i, j, plan.get(i, j) + t);
                }
                last_step = last_step.max(libm::fabs(t));
            }
            sweeps_used = sweeps_used.max(sweep);
            if last_step < tolerance {
                converged = true;
                break;
            }
        }
        let mut block_norm: f64 = 0.0;
        for &(i, k, q) in &coords {
            let g = block.slope(i, k, q, 0.0, utility);
            if !block.at_bound(i, k, q, margin, g) {
                block_norm = block_norm.max(libm::fabs(g));
            }
        }
        gradient_norm = gradient_norm.max(block_norm);
        if !converged {
            return Err(DecisionError::NoConvergence {
                sweeps: options.max_sweeps,
                last_step,
                gradient_norm: block_norm,
            });
        }
    }
    Ok(Solution { plan, sweeps: sweeps_used, projected_gradient_norm: gradient_norm })
}

/// Optimal purchase of contract `bin` alone at `price` for a holder of
/// `cash` and `holdings` in a single `n`-bin market with beliefs `beliefs`.
/// Positive means buy.
pub fn demand_single(
    beliefs: &[f64],
    cash: f64,
    holdings: &[f64],
    bin: usize,
    price: f64,
    utility: &Crra,
) -> Result<f64, DecisionError> {
    if beliefs.len() != holdings.len() || bin >= beliefs.len() {
        return Err(DecisionError::Shape("beliefs and holdings must cover the same bins"));
    }
    if !(price > 0.0 && price < 1.0) {
        return Err(DecisionError::DegeneratePrice(price));
    }
    let scenarios = beliefs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| Scenario { winners: alloc::vec![i], prob: p })
        .collect();
    let block = Block::new(cash, alloc::vec![0], scenarios, alloc::vec![holdings.to_vec()]);
    let floor = block.values[0].iter().fold(f64::INFINITY, |m, &v| m.min(v)) + cash;
    if floor < -SOLVENCY_TOLERANCE {
        return Err(DecisionError::Insolvent(floor));
    }
    let margin = SolverOptions::default().feasibility_margin * block.scale();
    Ok(block.best_step(bin, 0, price, utility, margin))
}

#[cfg(test)]
mod tests {
    use super::super::{binary_log_closed_form, expected_utility, gradient, worst_case, Matrix};
    use super::*;
    use alloc::vec;

    fn single_event(p: f64, q: f64, y: f64, z: f64) -> (Portfolio, PriceBoard, Beliefs) {
        (
            Portfolio::pooled(y, Matrix::column_vector(&[z, 0.0])),
            PriceBoard::single(2, 1, 0, 0, q).unwrap(),
            Beliefs::binary(p).unwrap(),
        )
    }

    #[test]
    fn zero_trade_at_belief() {
        let (pf, board, beliefs) = single_event(0.4, 0.4, 1000.0, 0.0);
        let x = optimal_trades(&pf, &board, &beliefs, &Crra::LOG).unwrap();
        assert!(libm::fabs(x.get(0, 0)) < 1e-9);
    }

    #[test]
    fn matches_reference_bid_quantity() {
        let (pf, board, beliefs) = single_event(0.3, 0.29, 1000.0, 0.0);
        let sol = optimal_trades_with(&pf, &board, &beliefs, &Crra::LOG, &SolverOptions::default()).unwrap();
        let x = sol.plan.get(0, 0);
        assert!((x - 48.567_265_662_943).abs() < 1e-6, "{x}");
        assert!(sol.projected_gradient_norm <= 1e-9 * 1001.0);
    }

    #[test]
    fn rejects_degenerate_and_arbitrage_boards() {
        let (pf, _, beliefs) = single_event(0.4, 0.4, 10.0, 0.0);
        let board = PriceBoard::single(2, 1, 0, 0, 1.0).unwrap();
        assert_eq!(optimal_trades(&pf, &board, &beliefs, &Crra::LOG), Err(DecisionError::DegeneratePrice(1.0)));
        let board = PriceBoard::full(&Matrix::column_vector(&[0.70, 0.33])).unwrap();
        assert!(matches!(
            optimal_trades(&pf, &board, &beliefs, &Crra::LOG),
            Err(DecisionError::Arbitrage { jurisdiction: 0, .. })
        ));
    }

    #[test]
    fn risk_neutral_goes_to_the_bound() {
        let (pf, board, beliefs) = single_event(0.6, 0.5, 100.0, 0.0);
        let x = optimal_trades(&pf, &board, &beliefs, &Crra::RISK_NEUTRAL).unwrap();
        // Everything in: 100 / 0.5 contracts, less the reserve.
        assert!((x.get(0, 0) - 200.0).abs() < 1e-6);
        let w = worst_case(&pf, &x, &board).unwrap();
        assert!((0.0..1e-6).contains(&w));
    }

    #[test]
    fn full_board_multi_bin() {
        // Three bins, all listed, prices summing to one.
        let q = [0.25, 0.45, 0.30];
        let pf = Portfolio::pooled(500.0, Matrix::zeros(3, 1));
        let board = PriceBoard::full(&Matrix::column_vector(&q)).unwrap();
        let beliefs = Beliefs::marginals(Matrix::column_vector(&[0.3, 0.5, 0.2])).unwrap();
        let sol = optimal_trades_with(&pf, &board, &beliefs, &Crra::LOG, &SolverOptions::default()).unwrap();
        // Log utility with complete markets: optimal wealth in each outcome
        // is proportional to p_i / q_i, i.e. w_i = y * p_i / q_i.
        let x = &sol.plan;
        let spend: f64 = (0..3).map(|i| q[i] * x.get(i, 0)).sum();
        for i in 0..3 {
            let w = 500.0 + x.get(i, 0) - spend;
            let target = 500.0 * [0.3, 0.5, 0.2][i] / q[i];
            assert!((w - target).abs() < 1e-5, "bin {i}: {w} vs {target}");
        }
        assert!(sol.projected_gradient_norm < 1e-9 * 501.0);
    }

    #[test]
    fn two_jurisdiction_joint_beliefs() {
        // Correlated outcomes: the same candidate tends to win both.
        let beliefs =
            Beliefs::joint(2, 2, vec![(vec![0, 0], 0.45), (vec![1, 1], 0.35), (vec![0, 1], 0.1), (vec![1, 0], 0.1)])
                .unwrap();
        let pf = Portfolio::pooled(1000.0, Matrix::zeros(2, 2));
        let board = PriceBoard::new(2, 2, vec![Some(0.5), None, Some(0.5), None]).unwrap();
        let sol = optimal_trades_with(&pf, &board, &beliefs, &Crra::LOG, &SolverOptions::default()).unwrap();
        let g = gradient(&pf, &sol.plan, &board, &beliefs, &Crra::LOG).unwrap();
        assert!(g.max_abs() < 1e-9 * 1001.0);
        // Both events have marginal probability 0.55 > 0.5: buy both, but
        // less than twice the single-market demand because they co-move.
        let single = binary_log_closed_form(0.55, 0.5, 1000.0, 0.0).unwrap();
        let (a, b) = (sol.plan.get(0, 0), sol.plan.get(0, 1));
        assert!(a > 0.0 && b > 0.0);
        assert!((a - b).abs() < 1e-6);
        assert!(a < single);
        let eu = expected_utility(&pf, &sol.plan, &board, &beliefs, &Crra::LOG).unwrap();
        assert!(eu > libm::log(1000.0));
    }

    #[test]
    fn partitioned_cash_solves_each_column() {
        let beliefs = Beliefs::marginals(Matrix::from_columns(&[vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap()).unwrap();
        let pf = Portfolio::partitioned(vec![1000.0, 200.0], Matrix::zeros(2, 2));
        let board = PriceBoard::new(2, 2, vec![Some(0.29), None, Some(0.5), None]).unwrap();
        let x = optimal_trades(&pf, &board, &beliefs, &Crra::LOG).unwrap();
        assert!((x.get(0, 0) - binary_log_closed_form(0.3, 0.29, 1000.0, 0.0).unwrap()).abs() < 1e-6);
        assert!((x.get(0, 1) - binary_log_closed_form(0.6, 0.5, 200.0, 0.0).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn insolvent_start_is_an_error() {
        let (pf, board, beliefs) = single_event(0.5, 0.5, -1.0, 0.0);
        assert!(matches!(optimal_trades(&pf, &board, &beliefs, &Crra::LOG), Err(DecisionError::Insolvent(_))));
    }

    #[test]
    fn iteration_cap_reports_diagnostics() {
        let q = [0.25, 0.45, 0.30];
        let pf = Portfolio::pooled(500.0, Matrix::zeros(3, 1));
        let board = PriceBoard::full(&Matrix::column_vector(&q)).unwrap();
        let beliefs = Beliefs::marginals(Matrix::column_vector(&[0.3, 0.5, 0.2])).unwrap();
        let options = SolverOptions { max_sweeps: 1, ..SolverOptions::default() };
        match optimal_trades_with(&pf, &board, &beliefs, &Crra::LOG, &options) {
            Err(DecisionError::NoConvergence { sweeps: 1, last_step, .. }) => assert!(last_step > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn converges_when_holdings_dwarf_cash() {
        // Nearly all wealth is in contracts, so step resolution follows the
        // holdings, not the cash.
        let (pf, board, beliefs) = single_event(0.9, 0.62, 0.05, 1500.0);
        let x = optimal_trades(&pf, &board, &beliefs, &Crra::LOG).unwrap().get(0, 0);
        let expected = binary_log_closed_form(0.9, 0.62, 0.05, 1500.0).unwrap();
        assert!((x - expected).abs() <= 1e-6 * (1.0 + expected.abs()), "{x} vs {expected}");
    }

    #[test]
    fn reserve_survives_rounding_at_large_scale() {
        let pf =
            Portfolio::pooled(18_900_142.46, Matrix::column_vector(&[-3_327_956.0, -7_138_468.06, -16_871_222.24]));
        let beliefs = Beliefs::marginals(Matrix::column_vector(&[0.7128, 0.2320, 0.0552])).unwrap();
        let board = PriceBoard::single(3, 1, 2, 0, 0.6945).unwrap();
        let plan = optimal_trades(&pf, &board, &beliefs, &Crra::LOG).unwrap();
        assert!(worst_case(&pf, &plan, &board).unwrap() >= 0.0);
    }

    #[test]
    fn demand_single_examples() {
        let p = [0.3, 0.5, 0.2];
        let z = [0.0; 3];
        let d = demand_single(&p, 1000.0, &z, 0, 0.29, &Crra::LOG).unwrap();
        assert!((d - 48.567_265_662_943).abs() < 1e-6);
        let d = demand_single(&p, 1000.0, &z, 2, 0.21, &Crra::LOG).unwrap();
        assert!((d + 60.277_275_467_148).abs() < 1e-6);
        assert!(libm::fabs(demand_single(&p, 1000.0, &z, 1, 0.5, &Crra::LOG).unwrap()) < 1e-9);
        assert!(demand_single(&p, 1000.0, &z, 1, 0.0, &Crra::LOG).is_err());
    }
}
