//! Seeded synthetic panels for demos and tests when no data files are given.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hybrid_core::fixed::Mills;
use hybrid_core::panel::{ForecastEntry, ForecastPanel, OutcomeRow, OutcomeTable, PriceEntry, PricePanel, Winner};
use hybrid_core::{Date, StateCode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::Inputs;

const STATES: [&str; 13] = ["AZ", "FL", "GA", "IA", "MI", "MN", "NC", "NH", "NV", "OH", "PA", "TX", "WI"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSpec {
    pub seed: u64,
    pub states: usize,
    pub days: usize,
    pub start: Date,
}

impl FixtureSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed, states: 13, days: 60, start: Date::new(2020, 9, 4).unwrap() }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Random-walk model forecasts, noisy market closes with an overround, and
/// outcomes drawn from the final model forecast.
pub fn synthetic(spec: &FixtureSpec) -> Inputs {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut model = ForecastPanel::default();
    let mut market = PricePanel::default();
    let mut outcomes = OutcomeTable::default();
    for code in STATES.iter().cycle().take(spec.states.min(STATES.len())) {
        let state: StateCode = code.parse().unwrap();
        let mut model_logit: f64 = rng.random_range(-2.0..2.0);
        let mut market_logit = model_logit + rng.random_range(-0.7..0.7);
        let mut date = spec.start;
        let mut last = 0.5;
        for _ in 0..spec.days {
            model_logit += rng.random_range(-0.15..0.15);
            market_logit += 0.1 * (model_logit - market_logit) + rng.random_range(-0.12..0.12);
            let p = (logistic(model_logit) * 1e4).round() / 1e4;
            model.insert(ForecastEntry { date, state, p }).unwrap();
            let dem = ((logistic(market_logit) * 100.0).round() as i64).clamp(1, 98);
            let rep = (100 - dem + rng.random_range(0..5)).clamp(1, 99);
            market.insert(PriceEntry { date, state, dem_yes: Mills(dem * 10), rep_yes: Mills(rep * 10) }).unwrap();
            last = p;
            date = date.succ();
        }
        let winner = if rng.random_bool(last) { Winner::Dem } else { Winner::Rep };
        let total: u64 = rng.random_range(1_000_000..8_000_000);
        let margin = (total as f64 * rng.random_range(0.001..0.15)) as u64;
        outcomes.insert(OutcomeRow { state, winner, margin_votes: margin, total_votes: Some(total) }).unwrap();
    }
    Inputs { model, market, outcomes }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputPaths {
    pub model: PathBuf,
    pub market: PathBuf,
    pub outcomes: PathBuf,
}

/// Writes inputs in the ingest schemas.
pub fn write_inputs(inputs: &Inputs, dir: &Path) -> std::io::Result<InputPaths> {
    fs::create_dir_all(dir)?;
    let paths = InputPaths {
        model: dir.join("model_forecasts.csv"),
        market: dir.join("market_prices.csv"),
        outcomes: dir.join("outcomes.csv"),
    };
    let mut f = fs::File::create(&paths.model)?;
    writeln!(f, "date,state,p_dem")?;
    for e in inputs.model.iter() {
        writeln!(f, "{},{},{}", e.date, e.state, e.p)?;
    }
    let mut f = fs::File::create(&paths.market)?;
    writeln!(f, "date,state,dem_yes,rep_yes")?;
    for e in inputs.market.iter() {
        writeln!(f, "{},{},{},{}", e.date, e.state, e.dem_yes.to_dollars(), e.rep_yes.to_dollars())?;
    }
    let mut f = fs::File::create(&paths.outcomes)?;
    writeln!(f, "state,winner,margin_votes,total_votes")?;
    for r in inputs.outcomes.iter() {
        let winner = match r.winner {
            Winner::Dem => "DEM",
            Winner::Rep => "REP",
        };
        let total = r.total_votes.map(|t| t.to_string()).unwrap_or_default();
        writeln!(f, "{},{},{},{}", r.state, winner, r.margin_votes, total)?;
    }
    Ok(paths)
}
