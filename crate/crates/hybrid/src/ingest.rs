//! CSV readers for model forecasts, market closes and election outcomes.
//!
//! Schemas (header row required, column order free, extra columns ignored):
//!
//! - model forecasts: `date,state,p_dem`
//! - market prices: `date,state,dem_yes,rep_yes`
//! - outcomes: `state,winner,margin_votes` and optionally `total_votes`
//!
//! Every row-level error names the file and the 1-based line number.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use hybrid_core::fixed::Mills;
use hybrid_core::panel::{
    align, AlignedPanel, ForecastEntry, ForecastPanel, OutcomeRow, OutcomeTable, PanelError, PriceEntry, PricePanel,
};
use hybrid_core::{Date, StateCode};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{file}: {source}")]
    Io { file: String, source: std::io::Error },
    #[error("{file}: {source}")]
    Csv { file: String, source: csv::Error },
    #[error("{file}: header lacks column `{column}`")]
    MissingColumn { file: String, column: &'static str },
    #[error("{file}:{line}: {message}")]
    Row { file: String, line: u64, message: String },
    #[error("cannot align inputs: {0}")]
    Align(#[from] PanelError),
}

struct Table<R> {
    file: String,
    reader: csv::Reader<R>,
    columns: Vec<usize>,
}

impl<R: Read> Table<R> {
    fn open(file: &str, input: R, required: &[&'static str], optional: &[&'static str]) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader.headers().map_err(|source| IngestError::Csv { file: file.into(), source })?.clone();
        let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let mut columns = Vec::new();
        for &column in required {
            columns.push(find(column).ok_or(IngestError::MissingColumn { file: file.into(), column })?);
        }
        for &column in optional {
            columns.push(find(column).unwrap_or(usize::MAX));
        }
        Ok(Self { file: file.into(), reader, columns })
    }

    /// Calls `f` with the line number and the selected fields of each row.
    fn rows(&mut self, mut f: impl FnMut(u64, &[&str]) -> Result<(), String>) -> Result<(), IngestError> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {}
                Err(source) => return Err(IngestError::Csv { file: self.file.clone(), source }),
            }
            let line = record.position().map_or(0, |p| p.line());
            if record.iter().all(str::is_empty) {
                continue;
            }
            let fields: Vec<&str> = self.columns.iter().map(|&i| record.get(i).unwrap_or("")).collect();
            f(line, &fields).map_err(|message| IngestError::Row { file: self.file.clone(), line, message })?;
        }
    }
}

fn date(s: &str) -> Result<Date, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn state(s: &str) -> Result<StateCode, String> {
    s.parse().map_err(|e: PanelError| e.to_string())
}

fn number(s: &str, column: &str) -> Result<f64, String> {
    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("`{s}` is not a number in column {column}"))
}

fn price(s: &str, column: &str) -> Result<Mills, String> {
    let v = number(s, column)?;
    if !(v > 0.0 && v < 1.0) {
        return Err(format!("{column} = {v} outside (0, 1)"));
    }
    Mills::from_dollars(v).ok_or_else(|| format!("{column} = {v} is finer than a tenth of a cent"))
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io { file: path.display().to_string(), source })
}

pub fn read_model<R: Read>(file: &str, input: R) -> Result<ForecastPanel, IngestError> {
    let mut t = Table::open(file, input, &["date", "state", "p_dem"], &[])?;
    let mut panel = ForecastPanel::default();
    t.rows(|_, f| {
        let p = number(f[2], "p_dem")?;
        panel.insert(ForecastEntry { date: date(f[0])?, state: state(f[1])?, p }).map_err(|e| e.to_string())
    })?;
    Ok(panel)
}

pub fn read_market<R: Read>(file: &str, input: R) -> Result<PricePanel, IngestError> {
    let mut t = Table::open(file, input, &["date", "state", "dem_yes", "rep_yes"], &[])?;
    let mut panel = PricePanel::default();
    t.rows(|_, f| {
        let entry = PriceEntry {
            date: date(f[0])?,
            state: state(f[1])?,
            dem_yes: price(f[2], "dem_yes")?,
            rep_yes: price(f[3], "rep_yes")?,
        };
        panel.insert(entry).map_err(|e| e.to_string())
    })?;
    Ok(panel)
}

pub fn read_outcomes<R: Read>(file: &str, input: R) -> Result<OutcomeTable, IngestError> {
    let mut t = Table::open(file, input, &["state", "winner", "margin_votes"], &["total_votes"])?;
    let mut table = OutcomeTable::default();
    t.rows(|_, f| {
        let count = |s: &str, column: &str| {
            s.parse::<u64>().map_err(|_| format!("`{s}` is not a vote count in column {column}"))
        };
        let total_votes = if f[3].is_empty() { None } else { Some(count(f[3], "total_votes")?) };
        let row = OutcomeRow {
            state: state(f[0])?,
            winner: f[1].parse().map_err(|e: PanelError| e.to_string())?,
            margin_votes: count(f[2], "margin_votes")?,
            total_votes,
        };
        table.insert(row).map_err(|e| e.to_string())
    })?;
    Ok(table)
}

pub fn parse_model_csv(path: &Path) -> Result<ForecastPanel, IngestError> {
    read_model(&path.display().to_string(), open(path)?)
}

pub fn parse_market_csv(path: &Path) -> Result<PricePanel, IngestError> {
    read_market(&path.display().to_string(), open(path)?)
}

pub fn parse_outcomes_csv(path: &Path) -> Result<OutcomeTable, IngestError> {
    read_outcomes(&path.display().to_string(), open(path)?)
}

/// The three inputs of a scoring or backtest run.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub model: ForecastPanel,
    pub market: PricePanel,
    pub outcomes: OutcomeTable,
}

impl Inputs {
    pub fn load(model: &Path, market: &Path, outcomes: &Path) -> Result<Self, IngestError> {
        Ok(Self {
            model: parse_model_csv(model)?,
            market: parse_market_csv(market)?,
            outcomes: parse_outcomes_csv(outcomes)?,
        })
    }

    pub fn align(&self) -> Result<AlignedPanel, IngestError> {
        Ok(align(&self.model, &self.market, &self.outcomes)?)
    }
}
