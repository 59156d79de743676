use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hybrid_core::backtest::{BacktestConfig, Closeness, FillPolicy, QuantityMode};
use hybrid_core::decision::Crra;
use hybrid_core::fixed::Money;
use hybrid_core::{Date, StateCode};
use hybrid_market::commands::{
    format_quote_table, parse_list, run_backtest, run_quotes, run_score, BacktestOptions, InputSource, ScoreOptions,
};
use hybrid_market::fixtures::FixtureSpec;
use hybrid_market::service::{Service, ServiceConfig};
use tracing_subscriber::EnvFilter;

/// Hybrid model/market forecasting: scoring, backtests, quoting and a
/// small exchange service.
#[derive(Parser)]
#[command(name = "hybrid", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Brier scores, calibration, frequency and dominance reports.
    Score(ScoreArgs),
    /// Replays model beliefs against market prices, one account per state.
    Backtest(BacktestArgs),
    /// Prints the quoting bot's order book for a belief vector.
    Quotes(QuotesArgs),
    /// Runs the exchange HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Model forecasts CSV (date,state,p_dem).
    #[arg(long, requires_all = ["market", "outcomes"])]
    model: Option<PathBuf>,
    /// Market closes CSV (date,state,dem_yes,rep_yes).
    #[arg(long, requires_all = ["model", "outcomes"])]
    market: Option<PathBuf>,
    /// Outcomes CSV (state,winner,margin_votes[,total_votes]).
    #[arg(long, requires_all = ["model", "market"])]
    outcomes: Option<PathBuf>,
    /// Seed for the synthetic panel used when no files are given.
    #[arg(long, default_value_t = 2020)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl InputArgs {
    fn source(&self) -> InputSource {
        match (&self.model, &self.market, &self.outcomes) {
            (Some(model), Some(market), Some(outcomes)) => {
                InputSource::Files { model: model.clone(), market: market.clone(), outcomes: outcomes.clone() }
            }
            _ => InputSource::Synthetic(FixtureSpec::new(self.seed)),
        }
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Calibration bin width.
    #[arg(long, default_value_t = 0.05)]
    bin_width: f64,
    /// Frequency bin width.
    #[arg(long, default_value_t = 0.01)]
    frequency_bin_width: f64,
    /// Also report per-state scores on this date (YYYY-MM-DD).
    #[arg(long)]
    date: Option<Date>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fill {
    Average,
    Dem,
    RepComplement,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// CRRA risk aversion; 1 is log utility.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Starting cash per state, in dollars.
    #[arg(long, default_value_t = 1000.0)]
    cash: f64,
    /// Fill price rule.
    #[arg(long, value_enum, default_value_t = Fill::Average)]
    fill: Fill,
    /// Trade whole contracts only.
    #[arg(long)]
    whole: bool,
    /// Counterfactual outcome flip; comma-separated states, repeatable.
    #[arg(long, value_name = "STATES")]
    flip: Vec<String>,
    /// Report the smallest set of close states whose flip makes profit negative.
    #[arg(long)]
    robustness: bool,
    /// Closeness threshold as a fraction of votes cast.
    #[arg(long, default_value_t = 0.01, conflicts_with = "threshold_votes")]
    threshold: f64,
    /// Closeness threshold in votes.
    #[arg(long)]
    threshold_votes: Option<u64>,
}

#[derive(Args)]
struct QuotesArgs {
    /// Comma-separated bin probabilities.
    #[arg(long)]
    beliefs: String,
    /// Bot cash in dollars.
    #[arg(long, default_value_t = 1000.0)]
    cash: f64,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Comma-separated contract holdings per bin.
    #[arg(long)]
    holdings: Option<String>,
    /// Also write quotes.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "HYBRID_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "HYBRID_ADMIN_TOKEN", hide_env_values = true)]
    admin_token: String,
    /// JSONL command journal, replayed on startup.
    #[arg(long, env = "HYBRID_EVENT_LOG")]
    event_log: Option<PathBuf>,
    /// Create a demo market with a quoting bot if the journal is empty.
    #[arg(long)]
    demo: bool,
    /// Maximum absolute position per bin, in contracts.
    #[arg(long)]
    position_cap: Option<i64>,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
}

fn score(a: ScoreArgs) -> Result<()> {
    let opts = ScoreOptions {
        bin_width: a.bin_width,
        frequency_bin_width: a.frequency_bin_width,
        date: a.date,
        ..ScoreOptions::new(a.input.source(), a.input.out.clone())
    };
    let r = run_score(&opts)?;
    println!("{} states x {} days", r.n_states, r.n_days);
    println!(
        "mean Brier: model {:.4}  market {:.4}  hybrid {:.4}",
        r.overall.model, r.overall.market, r.overall.hybrid
    );
    println!("hybrid best on {} dates, trailing streak {}", r.dominance.dates, r.dominance.trailing_streak);
    if let Some(d) = &r.date_report {
        println!("{}: model {:.4}  market {:.4}  hybrid {:.4}", d.date, d.mean_model, d.mean_market, d.mean_hybrid);
    }
    println!("wrote {}", a.input.out.display());
    Ok(())
}

fn backtest(a: BacktestArgs) -> Result<()> {
    let fill = match a.fill {
        Fill::Average => FillPolicy::AverageOfCloses,
        Fill::Dem => FillPolicy::DemClose,
        Fill::RepComplement => FillPolicy::RepComplement,
    };
    if !(a.cash.is_finite() && a.cash > 0.0) {
        bail!("--cash must be positive");
    }
    let config = BacktestConfig {
        initial_cash: Money::from_dollars(a.cash),
        utility: Crra::new(a.rho)?,
        fill,
        quantity: if a.whole { QuantityMode::WholeContracts } else { QuantityMode::Continuous },
    };
    let flips = a
        .flip
        .iter()
        .map(|s| s.split(',').map(|c| c.trim().parse::<StateCode>()).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    let robustness = a.robustness.then(|| a.threshold_votes.map_or(Closeness::Fraction(a.threshold), Closeness::Votes));
    let opts = BacktestOptions { source: a.input.source(), out: a.input.out.clone(), config, flips, robustness };
    let (s, _) = run_backtest(&opts)?;
    println!("{:<5} {:>12} {:>12} {:>12}", "state", "value", "payoff", "profit");
    for r in &s.states {
        println!("{:<5} {:>12.2} {:>12.2} {:>12.2}", r.state.as_str(), r.value, r.payoff, r.profit);
    }
    let t = &s.totals;
    println!(
        "{:<5} {:>12.2} {:>12.2} {:>12.2}  return {:.1}%",
        "total",
        t.value,
        t.payoff,
        t.profit,
        100.0 * t.return_rate
    );
    for f in &s.flips {
        println!(
            "flip {:<12} payoff {:>10.2} profit {:>10.2}  return {:.1}%",
            f.flipped,
            f.payoff,
            f.profit,
            100.0 * f.return_rate
        );
    }
    if let Some(r) = &s.robustness {
        match (r.diameter, r.min_flipped_votes) {
            (Some(d), Some(v)) => println!("robustness: {d} close states, {v} flipped votes"),
            _ => println!("robustness: no set of close states makes profit negative"),
        }
    }
    println!("wrote {}", a.input.out.display());
    Ok(())
}

fn quotes(a: QuotesArgs) -> Result<()> {
    let beliefs = parse_list(&a.beliefs)?;
    let holdings = a
        .holdings
        .as_deref()
        .map(|h| h.split(',').map(|x| x.trim().parse::<i64>().with_context(|| format!("bad holding `{x}`"))).collect())
        .transpose()?;
    let qs = run_quotes(beliefs, a.cash, a.rho, holdings)?;
    print!("{}", format_quote_table(&qs));
    if let Some(dir) = a.out {
        std::fs::create_dir_all(&dir)?;
        let mut text = serde_json::to_string_pretty(&qs)?;
        text.push('\n');
        std::fs::write(dir.join("quotes.json"), text)?;
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}

fn serve(a: ServeArgs) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    if a.admin_token.is_empty() {
        bail!("admin token must not be empty");
    }
    let config = ServiceConfig {
        admin_token: a.admin_token,
        event_log: a.event_log,
        position_cap: a.position_cap,
        demo: a.demo,
    };
    let service = Arc::new(Service::open(&config)?);
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("cannot bind {addr}"))?;
        tracing::info!(addr = %listener.local_addr()?, commands = service.journal_len(), "listening");
        hybrid_market::http::serve(service, listener, shutdown_signal()).await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Score(a) => score(a),
        Cmd::Backtest(a) => backtest(a),
        Cmd::Quotes(a) => quotes(a),
        Cmd::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
