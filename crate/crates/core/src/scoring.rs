//! Brier scores, calibration and frequency reports, and the simple-average
//! hybrid forecast.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::date::Date;
use crate::panel::{AlignedPanel, AlignedRecord, ForecastEntry, ForecastPanel, StateCode};

pub const DEFAULT_CALIBRATION_BIN_WIDTH: f64 = 0.05;
pub const DEFAULT_FREQUENCY_BIN_WIDTH: f64 = 0.01;
/// Weight on the model in the hybrid forecast.
pub const EQUAL_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("panel is empty")]
    EmptyPanel,
    #[error("no forecasts to bin")]
    NoForecasts,
    #[error("bin width {0} must be positive and divide 1 evenly")]
    BadBinWidth(f64),
    #[error("hybrid weight {0} outside [0, 1]")]
    BadWeight(f64),
    #[error("date {0} not in panel")]
    UnknownDate(Date),
}

/// Which forecast of a record to score.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Source {
    Model,
    Market,
    /// Equal-weight average of model and market.
    Hybrid,
    /// `w * model + (1 - w) * market`.
    Blend(f64),
}

impl Source {
    pub fn label(&self) -> &'static str {
        match self {
            Source::Model => "model",
            Source::Market => "market",
            Source::Hybrid => "hybrid",
            Source::Blend(_) => "blend",
        }
    }

    pub fn forecast(&self, record: &AlignedRecord) -> f64 {
        match *self {
            Source::Model => record.p_model,
            Source::Market => record.p_market,
            Source::Hybrid => blend(record.p_model, record.p_market, EQUAL_WEIGHT),
            Source::Blend(w) => blend(record.p_model, record.p_market, w),
        }
    }

    fn validate(&self) -> Result<(), ScoringError> {
        match *self {
            Source::Blend(w) if !(0.0..=1.0).contains(&w) => Err(ScoringError::BadWeight(w)),
            _ => Ok(()),
        }
    }
}

fn blend(model: f64, market: f64, w: f64) -> f64 {
    w * model + (1.0 - w) * market
}

/// Squared error of forecast `p` against the realization `r`.
pub fn brier(p: f64, r: bool) -> f64 {
    let target = if r { 1.0 } else { 0.0 };
    (p - target) * (p - target)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RecordScore {
    pub date: Date,
    pub state: StateCode,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BrierSeries {
    pub daily: Vec<(Date, f64)>,
    pub records: Vec<RecordScore>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

pub fn daily_mean(panel: &AlignedPanel, source: Source) -> Result<BrierSeries, ScoringError> {
    source.validate()?;
    if panel.is_empty() {
        return Err(ScoringError::EmptyPanel);
    }
    let daily = panel
        .dates()
        .iter()
        .enumerate()
        .map(|(di, &date)| {
            let m = mean(panel.on_date(di).map(|r| brier(source.forecast(r), r.r)));
            (date, m)
        })
        .collect();
    let records = panel
        .records()
        .iter()
        .map(|r| RecordScore { date: r.date, state: r.state, score: brier(source.forecast(r), r.r) })
        .collect();
    Ok(BrierSeries { daily, records })
}

pub fn overall_mean(panel: &AlignedPanel, source: Source) -> Result<f64, ScoringError> {
    source.validate()?;
    if panel.is_empty() {
        return Err(ScoringError::EmptyPanel);
    }
    Ok(mean(panel.records().iter().map(|r| brier(source.forecast(r), r.r))))
}

/// Per-record simple average of model and market.
pub fn synthetic(panel: &AlignedPanel) -> ForecastPanel {
    synthetic_weighted(panel, EQUAL_WEIGHT).expect("equal weight is valid")
}

pub fn synthetic_weighted(panel: &AlignedPanel, model_weight: f64) -> Result<ForecastPanel, ScoringError> {
    Source::Blend(model_weight).validate()?;
    let entries = panel.records().iter().map(|r| ForecastEntry {
        date: r.date,
        state: r.state,
        p: blend(r.p_model, r.p_market, model_weight),
    });
    Ok(ForecastPanel::new(entries).expect("aligned panel keys are unique and blends stay in [0, 1]"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_forecast: f64,
    pub realized_frequency: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationCurve {
    pub bin_width: f64,
    pub bins: Vec<CalibrationBin>,
}

fn bin_count(width: f64) -> Result<usize, ScoringError> {
    if !(width > 0.0 && width <= 1.0) {
        return Err(ScoringError::BadBinWidth(width));
    }
    let k = libm::round(1.0 / width);
    if libm::fabs(k * width - 1.0) > 1e-9 {
        return Err(ScoringError::BadBinWidth(width));
    }
    Ok(k as usize)
}

/// Index of the half-open bin `[k w, (k+1) w)` holding `p`; the last bin is
/// closed so that `p = 1` lands in it.
fn bin_index(p: f64, width: f64, bins: usize) -> usize {
    // The epsilon keeps grid points such as 0.63 / 0.01 from sliding into
    // the bin below through representation error.
    let k = libm::floor(p / width + 1e-9);
    if k < 0.0 {
        0
    } else {
        (k as usize).min(bins - 1)
    }
}

pub fn calibration(forecasts: &[(f64, bool)], bin_width: f64) -> Result<CalibrationCurve, ScoringError> {
    let n_bins = bin_count(bin_width)?;
    if forecasts.is_empty() {
        return Err(ScoringError::NoForecasts);
    }
    let mut acc: BTreeMap<usize, (usize, f64, usize)> = BTreeMap::new();
    for &(p, r) in forecasts {
        let e = acc.entry(bin_index(p, bin_width, n_bins)).or_default();
        e.0 += 1;
        e.1 += p;
        e.2 += r as usize;
    }
    let bins = acc
        .into_iter()
        .map(|(k, (count, sum_p, hits))| CalibrationBin {
            lower: k as f64 * bin_width,
            upper: (k + 1) as f64 * bin_width,
            count,
            mean_forecast: sum_p / count as f64,
            realized_frequency: hits as f64 / count as f64,
        })
        .collect();
    Ok(CalibrationCurve { bin_width, bins })
}

/// Calibration of one source over every record in the panel.
pub fn panel_calibration(
    panel: &AlignedPanel,
    source: Source,
    bin_width: f64,
) -> Result<CalibrationCurve, ScoringError> {
    source.validate()?;
    let forecasts: Vec<(f64, bool)> = panel.records().iter().map(|r| (source.forecast(r), r.r)).collect();
    calibration(&forecasts, bin_width)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrequencyBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub distinct_states: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrequencyReport {
    pub bin_width: f64,
    /// Every bin over [0, 1], including empty ones.
    pub bins: Vec<FrequencyBin>,
}

impl FrequencyReport {
    /// The largest distinct-state count and the lower edges of every bin
    /// attaining it.
    pub fn peak_distinct_states(&self) -> (usize, Vec<f64>) {
        let max = self.bins.iter().map(|b| b.distinct_states).max().unwrap_or(0);
        let at = self.bins.iter().filter(|b| b.distinct_states == max && max > 0).map(|b| b.lower).collect();
        (max, at)
    }
}

pub fn frequency(panel: &AlignedPanel, source: Source, bin_width: f64) -> Result<FrequencyReport, ScoringError> {
    source.validate()?;
    let n_bins = bin_count(bin_width)?;
    let mut counts = alloc::vec![0usize; n_bins];
    let mut states: Vec<BTreeSet<StateCode>> = alloc::vec![BTreeSet::new(); n_bins];
    for r in panel.records() {
        let k = bin_index(source.forecast(r), bin_width, n_bins);
        counts[k] += 1;
        states[k].insert(r.state);
    }
    let bins = (0..n_bins)
        .map(|k| FrequencyBin {
            lower: k as f64 * bin_width,
            upper: (k + 1) as f64 * bin_width,
            count: counts[k],
            distinct_states: states[k].len(),
        })
        .collect();
    Ok(FrequencyReport { bin_width, bins })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DominanceDay {
    pub date: Date,
    pub model: f64,
    pub market: f64,
    pub hybrid: f64,
    /// Hybrid strictly below both components.
    pub dominates: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DominanceReport {
    pub days: Vec<DominanceDay>,
    pub count: usize,
    /// Consecutive dominance days ending at the panel's last date.
    pub trailing_streak: usize,
}

pub fn dominance(panel: &AlignedPanel) -> Result<DominanceReport, ScoringError> {
    let model = daily_mean(panel, Source::Model)?;
    let market = daily_mean(panel, Source::Market)?;
    let hybrid = daily_mean(panel, Source::Hybrid)?;
    let days: Vec<DominanceDay> = model
        .daily
        .iter()
        .zip(&market.daily)
        .zip(&hybrid.daily)
        .map(|((&(date, mo), &(_, ma)), &(_, hy))| DominanceDay {
            date,
            model: mo,
            market: ma,
            hybrid: hy,
            dominates: hy < mo.min(ma),
        })
        .collect();
    let count = days.iter().filter(|d| d.dominates).count();
    let trailing_streak = days.iter().rev().take_while(|d| d.dominates).count();
    Ok(DominanceReport { days, count, trailing_streak })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateScores {
    pub state: StateCode,
    pub model: f64,
    pub market: f64,
    pub hybrid: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DateReport {
    pub date: Date,
    pub states: Vec<StateScores>,
    pub mean_model: f64,
    pub mean_market: f64,
    pub mean_hybrid: f64,
}

/// Per-state scores of all three forecasts on a single date.
pub fn date_report(panel: &AlignedPanel, date: Date) -> Result<DateReport, ScoringError> {
    let di = panel.date_index(date).ok_or(ScoringError::UnknownDate(date))?;
    let states: Vec<StateScores> = panel
        .on_date(di)
        .map(|r| StateScores {
            state: r.state,
            model: brier(Source::Model.forecast(r), r.r),
            market: brier(Source::Market.forecast(r), r.r),
            hybrid: brier(Source::Hybrid.forecast(r), r.r),
        })
        .collect();
    Ok(DateReport {
        date,
        mean_model: mean(states.iter().map(|s| s.model)),
        mean_market: mean(states.iter().map(|s| s.market)),
        mean_hybrid: mean(states.iter().map(|s| s.hybrid)),
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::Mills;

    fn rec(date: &str, state: &str, p_model: f64, p_market: f64, r: bool) -> AlignedRecord {
        AlignedRecord {
            date: date.parse().unwrap(),
            state: state.parse().unwrap(),
            p_model,
            p_market,
            dem_yes: Mills(500),
            rep_yes: Mills(500),
            r,
        }
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(1.0, true), 0.0);
        assert_eq!(brier(0.5, false), 0.25);
        assert!((brier(0.97, true) - 0.0009).abs() < 1e-15);
    }

    #[test]
    fn daily_mean_examples() {
        let panel = AlignedPanel::from_records(
            ["2020-01-01", "2020-01-02", "2020-01-03"].map(|d| rec(d, "WI", 0.6, 0.6, true)),
        )
        .unwrap();
        let s = daily_mean(&panel, Source::Model).unwrap();
        assert!(s.daily.iter().all(|&(_, v)| (v - 0.16).abs() < 1e-15));

        // Scores 0.01 and 0.49 on the same date average to 0.25.
        let panel = AlignedPanel::from_records([
            rec("2020-01-01", "WI", 0.9, 0.5, true),
            rec("2020-01-01", "AZ", 0.7, 0.5, false),
        ])
        .unwrap();
        let s = daily_mean(&panel, Source::Model).unwrap();
        assert!((s.daily[0].1 - 0.25).abs() < 1e-15);
        assert!((overall_mean(&panel, Source::Model).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn empty_panel_errors() {
        let panel = AlignedPanel::from_records([]).unwrap();
        assert_eq!(daily_mean(&panel, Source::Model), Err(ScoringError::EmptyPanel));
        assert_eq!(overall_mean(&panel, Source::Market), Err(ScoringError::EmptyPanel));
    }

    #[test]
    fn synthetic_examples() {
        let panel = AlignedPanel::from_records([
            rec("2020-01-01", "WI", 0.4, 0.6, true),
            rec("2020-01-01", "AZ", 0.3, 0.3, true),
            rec("2020-01-01", "FL", 0.78, 0.62, false),
        ])
        .unwrap();
        let s = synthetic(&panel);
        let day = "2020-01-01".parse().unwrap();
        assert!((s.get(day, "WI".parse().unwrap()).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(s.get(day, "AZ".parse().unwrap()), Some(0.3));
        assert!((s.get(day, "FL".parse().unwrap()).unwrap() - 0.70).abs() < 1e-15);
        assert!(synthetic_weighted(&panel, 1.5).is_err());
    }

    #[test]
    fn calibration_examples() {
        let fs: Vec<(f64, bool)> = (0..10).map(|i| (0.5, i % 2 == 0)).collect();
        let c = calibration(&fs, 0.05).unwrap();
        assert_eq!(c.bins.len(), 1);
        assert_eq!(c.bins[0].realized_frequency, 0.5);
        assert!((c.bins[0].lower - 0.5).abs() < 1e-12);

        let c = calibration(&[(0.99, true)], 0.05).unwrap();
        assert_eq!(c.bins[0].realized_frequency, 1.0);
        assert!((c.bins[0].lower - 0.95).abs() < 1e-12);

        let c = calibration(&[(1.0, true), (0.0, false)], 0.05).unwrap();
        assert_eq!(c.bins.len(), 2);
        assert!((c.bins[1].upper - 1.0).abs() < 1e-12);

        assert_eq!(calibration(&[], 0.05), Err(ScoringError::NoForecasts));
        assert_eq!(calibration(&fs, 0.3), Err(ScoringError::BadBinWidth(0.3)));
        assert_eq!(calibration(&fs, 0.0), Err(ScoringError::BadBinWidth(0.0)));
    }

    #[test]
    fn frequency_single_record() {
        let panel = AlignedPanel::from_records([rec("2020-01-01", "WI", 0.63, 0.5, true)]).unwrap();
        let f = frequency(&panel, Source::Model, 0.01).unwrap();
        assert_eq!(f.bins.len(), 100);
        let hit: Vec<_> = f.bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(hit.len(), 1);
        assert_eq!((hit[0].count, hit[0].distinct_states), (1, 1));
        assert!((hit[0].lower - 0.63).abs() < 1e-12);
        let (peak, at) = f.peak_distinct_states();
        assert_eq!(peak, 1);
        assert_eq!(at.len(), 1);
    }

    #[test]
    fn dominance_needs_disagreement() {
        let panel = AlignedPanel::from_records([
            rec("2020-01-01", "WI", 0.7, 0.7, true),
            rec("2020-01-01", "AZ", 0.2, 0.2, false),
        ])
        .unwrap();
        let d = dominance(&panel).unwrap();
        assert_eq!((d.count, d.trailing_streak), (0, 0));
    }

    #[test]
    fn date_report_unknown_date() {
        let panel = AlignedPanel::from_records([rec("2020-01-01", "WI", 0.7, 0.6, true)]).unwrap();
        let missing = "2020-01-02".parse().unwrap();
        assert_eq!(date_report(&panel, missing), Err(ScoringError::UnknownDate(missing)));
        let r = date_report(&panel, "2020-01-01".parse().unwrap()).unwrap();
        assert!((r.mean_hybrid - brier(0.65, true)).abs() < 1e-15);
    }
}
