//! The `score`, `backtest` and `quotes` commands as library calls.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hybrid_core::backtest::{
    flip_analysis, robustness_diameter, run_panel, BacktestConfig, Closeness, FlipScenario, PanelReport, Robustness,
    StateResult, Totals,
};
use hybrid_core::decision::Crra;
use hybrid_core::engine::AccountId;
use hybrid_core::maker::{BotState, QuoteSet};
use hybrid_core::panel::AlignedPanel;
use hybrid_core::scoring::{
    daily_mean, date_report, dominance, frequency, overall_mean, panel_calibration, DateReport, Source,
    DEFAULT_CALIBRATION_BIN_WIDTH, DEFAULT_FREQUENCY_BIN_WIDTH,
};
use hybrid_core::{Date, StateCode};
use serde::Serialize;

use crate::fixtures::{synthetic, FixtureSpec};
use crate::ingest::Inputs;
use crate::manifest::RunManifest;
use crate::report::OutputDir;

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Files { model: PathBuf, market: PathBuf, outcomes: PathBuf },
    Synthetic(FixtureSpec),
}

impl InputSource {
    pub fn load(&self) -> Result<Inputs> {
        Ok(match self {
            InputSource::Files { model, market, outcomes } => Inputs::load(model, market, outcomes)?,
            InputSource::Synthetic(spec) => synthetic(spec),
        })
    }

    fn describe(&self, manifest: &mut RunManifest) -> Result<serde_json::Value> {
        Ok(match self {
            InputSource::Files { model, market, outcomes } => {
                for p in [model, market, outcomes] {
                    manifest.add_input(p).with_context(|| format!("reading {}", p.display()))?;
                }
                serde_json::json!({"kind": "files"})
            }
            InputSource::Synthetic(s) => serde_json::json!({
                "kind": "synthetic", "seed": s.seed, "states": s.states, "days": s.days, "start": s.start.to_string(),
            }),
        })
    }
}

fn start(
    command: &str,
    source: &InputSource,
    config: serde_json::Value,
    out: &Path,
) -> Result<(OutputDir, AlignedPanel, Inputs)> {
    let inputs = source.load()?;
    let panel = inputs.align()?;
    let mut manifest = RunManifest::new(command, serde_json::Value::Null);
    let described = source.describe(&mut manifest)?;
    manifest.config = serde_json::json!({"input": described, "options": config});
    let dir = OutputDir::create(out, manifest).with_context(|| format!("creating {}", out.display()))?;
    Ok((dir, panel, inputs))
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub source: InputSource,
    pub out: PathBuf,
    pub bin_width: f64,
    pub frequency_bin_width: f64,
    pub date: Option<Date>,
}

impl ScoreOptions {
    pub fn new(source: InputSource, out: PathBuf) -> Self {
        Self {
            source,
            out,
            bin_width: DEFAULT_CALIBRATION_BIN_WIDTH,
            frequency_bin_width: DEFAULT_FREQUENCY_BIN_WIDTH,
            date: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Means {
    pub model: f64,
    pub market: f64,
    pub hybrid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceSummary {
    pub dates: usize,
    pub trailing_streak: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakDistinct {
    pub source: &'static str,
    pub distinct_states: usize,
    pub bin_lowers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub n_states: usize,
    pub n_days: usize,
    pub overall: Means,
    pub dominance: DominanceSummary,
    pub peak_distinct_states: Vec<PeakDistinct>,
    pub date_report: Option<DateReport>,
}

#[derive(Serialize)]
struct DailyRow {
    date: Date,
    model: f64,
    market: f64,
    hybrid: f64,
}

#[derive(Serialize)]
struct CalibrationRow {
    source: &'static str,
    lower: f64,
    upper: f64,
    count: usize,
    mean_forecast: Option<f64>,
    realized_frequency: Option<f64>,
}

#[derive(Serialize)]
struct FrequencyRow {
    source: &'static str,
    lower: f64,
    upper: f64,
    count: usize,
    distinct_states: usize,
}

#[derive(Serialize)]
struct DominanceRow {
    date: Date,
    model: f64,
    market: f64,
    hybrid: f64,
    dominates: bool,
}

#[derive(Serialize)]
struct StateScoreRow {
    state: StateCode,
    p_model: f64,
    p_market: f64,
    p_hybrid: f64,
    r: u8,
    brier_model: f64,
    brier_market: f64,
    brier_hybrid: f64,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn run_score(opts: &ScoreOptions) -> Result<ScoreReport> {
    let config = serde_json::json!({
        "bin_width": opts.bin_width,
        "frequency_bin_width": opts.frequency_bin_width,
        "date": opts.date.map(|d| d.to_string()),
    });
    let (mut out, panel, _) = start("score", &opts.source, config, &opts.out)?;
    let sources = [Source::Model, Source::Market, Source::Hybrid];

    let series: Vec<_> = sources.iter().map(|&s| daily_mean(&panel, s)).collect::<Result<_, _>>()?;
    let daily: Vec<DailyRow> = (0..panel.n_days())
        .map(|i| DailyRow {
            date: series[0].daily[i].0,
            model: series[0].daily[i].1,
            market: series[1].daily[i].1,
            hybrid: series[2].daily[i].1,
        })
        .collect();
    out.csv("daily_brier.csv", &daily)?;

    let mut cal = Vec::new();
    let mut freq = Vec::new();
    let mut peaks = Vec::new();
    for s in sources {
        for b in panel_calibration(&panel, s, opts.bin_width)?.bins {
            cal.push(CalibrationRow {
                source: s.label(),
                lower: b.lower,
                upper: b.upper,
                count: b.count,
                mean_forecast: finite(b.mean_forecast),
                realized_frequency: finite(b.realized_frequency),
            });
        }
        let f = frequency(&panel, s, opts.frequency_bin_width)?;
        let (distinct_states, bin_lowers) = f.peak_distinct_states();
        peaks.push(PeakDistinct { source: s.label(), distinct_states, bin_lowers });
        freq.extend(f.bins.into_iter().map(|b| FrequencyRow {
            source: s.label(),
            lower: b.lower,
            upper: b.upper,
            count: b.count,
            distinct_states: b.distinct_states,
        }));
    }
    out.csv("calibration.csv", &cal)?;
    out.csv("frequency.csv", &freq)?;

    let dom = dominance(&panel)?;
    let rows: Vec<DominanceRow> = dom
        .days
        .iter()
        .map(|d| DominanceRow {
            date: d.date,
            model: d.model,
            market: d.market,
            hybrid: d.hybrid,
            dominates: d.dominates,
        })
        .collect();
    out.csv("dominance.csv", &rows)?;

    let date_report = match opts.date {
        Some(date) => {
            let report = date_report(&panel, date)?;
            let di = panel.date_index(date).expect("date_report checked the date");
            let rows: Vec<StateScoreRow> = panel
                .on_date(di)
                .zip(&report.states)
                .map(|(rec, s)| StateScoreRow {
                    state: s.state,
                    p_model: rec.p_model,
                    p_market: rec.p_market,
                    p_hybrid: Source::Hybrid.forecast(rec),
                    r: rec.r as u8,
                    brier_model: s.model,
                    brier_market: s.market,
                    brier_hybrid: s.hybrid,
                })
                .collect();
            out.csv(&format!("state_scores_{date}.csv"), &rows)?;
            Some(report)
        }
        None => None,
    };

    let report = ScoreReport {
        n_states: panel.n_states(),
        n_days: panel.n_days(),
        overall: Means {
            model: overall_mean(&panel, Source::Model)?,
            market: overall_mean(&panel, Source::Market)?,
            hybrid: overall_mean(&panel, Source::Hybrid)?,
        },
        dominance: DominanceSummary { dates: dom.count, trailing_streak: dom.trailing_streak },
        peak_distinct_states: peaks,
        date_report,
    };
    out.json("scores.json", &report)?;
    out.finish()?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct BacktestOptions {
    pub source: InputSource,
    pub out: PathBuf,
    pub config: BacktestConfig,
    pub flips: Vec<Vec<StateCode>>,
    pub robustness: Option<Closeness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateRow {
    pub state: StateCode,
    pub occurred: bool,
    pub cash: f64,
    pub contracts: f64,
    pub value: f64,
    pub payoff: f64,
    pub profit: f64,
    pub return_rate: f64,
}

impl From<&StateResult> for StateRow {
    fn from(r: &StateResult) -> Self {
        Self {
            state: r.state,
            occurred: r.occurred,
            cash: r.cash.to_dollars(),
            contracts: r.contracts.to_contracts(),
            value: r.value.to_dollars(),
            payoff: r.payoff.to_dollars(),
            profit: r.profit.to_dollars(),
            return_rate: r.return_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TotalsRow {
    pub initial_cash: f64,
    pub value: f64,
    pub payoff: f64,
    pub profit: f64,
    pub return_rate: f64,
}

impl From<&Totals> for TotalsRow {
    fn from(t: &Totals) -> Self {
        Self {
            initial_cash: t.initial_cash.to_dollars(),
            value: t.value.to_dollars(),
            payoff: t.payoff.to_dollars(),
            profit: t.profit.to_dollars(),
            return_rate: t.return_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlipRow {
    pub flipped: String,
    pub margin_votes: u64,
    pub payoff: f64,
    pub profit: f64,
    pub return_rate: f64,
}

impl From<&FlipScenario> for FlipRow {
    fn from(f: &FlipScenario) -> Self {
        Self {
            flipped: f.flipped.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("+"),
            margin_votes: f.margin_votes,
            payoff: f.payoff.to_dollars(),
            profit: f.profit.to_dollars(),
            return_rate: f.return_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestSummary {
    pub states: Vec<StateRow>,
    pub totals: TotalsRow,
    pub flips: Vec<FlipRow>,
    pub robustness: Option<Robustness>,
}

#[derive(Serialize)]
struct TrajectoryCsv {
    state: StateCode,
    date: Date,
    belief: f64,
    price: f64,
    trade: f64,
    cash: f64,
    contracts: f64,
    value: f64,
}

pub fn run_backtest(opts: &BacktestOptions) -> Result<(BacktestSummary, PanelReport)> {
    let c = &opts.config;
    let config = serde_json::json!({
        "initial_cash": c.initial_cash.to_dollars(),
        "rho": c.utility.rho(),
        "fill": format!("{:?}", c.fill),
        "quantity": format!("{:?}", c.quantity),
        "flips": opts.flips.iter().map(|f| f.iter().map(|s| s.to_string()).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "robustness": opts.robustness.map(|r| format!("{r:?}")),
    });
    let (mut out, panel, inputs) = start("backtest", &opts.source, config, &opts.out)?;
    let report = run_panel(&panel, &opts.config)?;

    let traj: Vec<TrajectoryCsv> = report
        .states
        .iter()
        .flat_map(|s| {
            s.trajectory.iter().map(move |r| TrajectoryCsv {
                state: s.result.state,
                date: r.date,
                belief: r.belief,
                price: r.price.to_dollars(),
                trade: r.trade.to_contracts(),
                cash: r.cash.to_dollars(),
                contracts: r.contracts.to_contracts(),
                value: r.value.to_dollars(),
            })
        })
        .collect();
    out.csv("trajectories.csv", &traj)?;

    let states: Vec<StateRow> = report.states.iter().map(|s| StateRow::from(&s.result)).collect();
    out.csv("states.csv", &states)?;

    let flips: Vec<FlipRow> = if opts.flips.is_empty() {
        Vec::new()
    } else {
        flip_analysis(&report, &inputs.outcomes, &opts.flips)?.iter().map(FlipRow::from).collect()
    };
    if !flips.is_empty() {
        out.csv("flips.csv", &flips)?;
    }
    let robustness = opts.robustness.map(|c| robustness_diameter(&report, &inputs.outcomes, c)).transpose()?;
    let summary = BacktestSummary { states, totals: TotalsRow::from(&report.totals), flips, robustness };
    out.json("backtest.json", &summary)?;
    out.finish()?;
    Ok((summary, report))
}

/// Parses comma-separated decimals.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|x| x.trim().parse::<f64>().with_context(|| format!("`{x}` is not a number"))).collect()
}

/// Parses a dollar amount that must be on the cent grid.
pub fn dollars_to_cents(d: f64) -> Result<i64> {
    let cents = (d * 100.0).round();
    if !d.is_finite() || d < 0.0 || (d * 100.0 - cents).abs() > 1e-6 {
        bail!("cash {d} must be a non-negative whole number of cents");
    }
    Ok(cents as i64)
}

pub fn run_quotes(beliefs: Vec<f64>, cash: f64, rho: f64, holdings: Option<Vec<i64>>) -> Result<QuoteSet> {
    let n = beliefs.len();
    let mut bot = BotState::new(AccountId(0), beliefs, dollars_to_cents(cash)?, Crra::new(rho)?)?;
    if let Some(h) = holdings {
        if h.len() != n {
            bail!("{} holdings given for {n} bins", h.len());
        }
        bot = bot.with_holdings(h)?;
    }
    Ok(bot.quote_set()?)
}

/// The quote set as a bin-by-bin table.
pub fn format_quote_table(qs: &QuoteSet) -> String {
    let mut s = String::from("Bin | Bid Price | Bid Quantity | Ask Price | Ask Quantity\n");
    let cell = |q: Option<hybrid_core::maker::Quote>| match q {
        Some(q) => (format!("{:.2}", q.price as f64 / 100.0), q.quantity.to_string()),
        None => ("-".into(), "-".into()),
    };
    for (i, b) in qs.bins.iter().enumerate() {
        let (bp, bq) = cell(b.bid);
        let (ap, aq) = cell(b.ask);
        let _ = writeln!(s, "{:>3} | {bp:>9} | {bq:>12} | {ap:>9} | {aq:>12}", i + 1);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quote_table_layout() {
        let qs = run_quotes(vec![0.3, 0.5, 0.2], 1000.0, 1.0, None).unwrap();
        let t = format_quote_table(&qs);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[1], "  1 |      0.29 |           48 |      0.31 |           46");
        assert_eq!(lines[3], "  3 |      0.19 |           64 |      0.21 |           60");
    }

    #[test]
    fn cash_parsing() {
        assert_eq!(dollars_to_cents(986.08).unwrap(), 98_608);
        assert!(dollars_to_cents(1.005).is_err());
        assert!(dollars_to_cents(-1.0).is_err());
        assert!(run_quotes(vec![0.3, 0.5, 0.2], 1000.0, 1.0, Some(vec![1, 2])).is_err());
    }
}
