//! Calendar fixed effects, min-max scaling, chronological splitting, seasonal
//! labels and fixed-length sequence construction.

use chrono::{Datelike, Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::HourlySeries;

/// The four categorical calendar covariates attached to an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarFeatures {
    /// Hour of day, 0..=23.
    pub hour: u8,
    /// Day of week with Monday = 0, 0..=6.
    pub day_of_week: u8,
    /// Calendar month, 1..=12.
    pub month: u8,
    pub year: i32,
}

/// Fitted min-max parameters for one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub feature_min: f64,
    pub feature_max: f64,
}

/// Quarter labels. The source protocol only names the summer (Jul-Sep) and
/// winter (Oct-Dec) quarters; Q1/Q2 complete the partition so an annual model
/// can cover the remaining months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeasonLabel {
    Summer,
    Winter,
    Q1,
    Q2,
}

impl SeasonLabel {
    pub const ALL: [SeasonLabel; 4] = [SeasonLabel::Q1, SeasonLabel::Q2, SeasonLabel::Summer, SeasonLabel::Winter];

    pub fn of_month(month: u8) -> Self {
        match month {
            1..=3 => SeasonLabel::Q1,
            4..=6 => SeasonLabel::Q2,
            7..=9 => SeasonLabel::Summer,
            10..=12 => SeasonLabel::Winter,
            other => panic!("month out of range: {other}"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SeasonLabel::Summer => "summer",
            SeasonLabel::Winter => "winter",
            SeasonLabel::Q1 => "q1",
            SeasonLabel::Q2 => "q2",
        }
    }
}

/// One LSTM input: a scaled temperature window ending at the target hour,
/// the target hour's calendar features, and (when known) the scaled target.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub target_ts: NaiveDateTime,
    /// Window of length L in chronological order, hours t-L+1 ..= t, scaled.
    pub temperature_window: Vec<f64>,
    /// Raw temperature at the target hour, degrees Celsius.
    pub target_temperature_c: f64,
    pub calendar: CalendarFeatures,
    pub target_demand_scaled: Option<f64>,
    pub target_demand_mw: Option<f64>,
}

#[derive(Debug, Error)]
pub enum FeaturesError {
    #[error("empty input")]
    EmptyInput,
    #[error("too few records to split: {0}")]
    TooFewRecords(usize),
    #[error("series too short: {len} records cannot yield a window of {window}")]
    SeriesTooShort { len: usize, window: usize },
}

/// Calendar features of a civil timestamp (Monday = 0 convention).
pub fn extract_calendar(ts: NaiveDateTime) -> CalendarFeatures {
    CalendarFeatures {
        hour: ts.hour() as u8,
        day_of_week: ts.weekday().num_days_from_monday() as u8,
        month: ts.month() as u8,
        year: ts.year(),
    }
}

/// Min and max of a nonempty list of finite values.
pub fn fit_scaler(values: &[f64]) -> Result<ScalerParams, FeaturesError> {
    if values.is_empty() {
        return Err(FeaturesError::EmptyInput);
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
    }
    Ok(ScalerParams { feature_min: min, feature_max: max })
}

/// `(x - min) / (max - min)`, without clamping: values outside the fitted
/// range map outside `[0, 1]`. Degenerate parameters map everything to 0.
pub fn apply_scaler(p: &ScalerParams, x: f64) -> f64 {
    let span = p.feature_max - p.feature_min;
    if span == 0.0 {
        return 0.0;
    }
    (x - p.feature_min) / span
}

/// Exact algebraic inverse of [`apply_scaler`].
pub fn invert_scaler(p: &ScalerParams, y: f64) -> f64 {
    p.feature_min + y * (p.feature_max - p.feature_min)
}

/// Chronological split where the hold-out partition is the **earliest**
/// `floor(n * holdout_frac)` records and training is the remainder.
pub fn chrono_split(
    series: &HourlySeries,
    holdout_frac: f64,
) -> Result<(HourlySeries, HourlySeries), FeaturesError> {
    assert!(holdout_frac > 0.0 && holdout_frac < 1.0, "holdout_frac must be in (0, 1)");
    let n = series.len();
    let holdout_n = (n as f64 * holdout_frac).floor() as usize;
    if holdout_n == 0 || holdout_n == n {
        return Err(FeaturesError::TooFewRecords(n));
    }
    let records = series.records();
    let labels = series.source_labels().to_vec();
    let holdout = HourlySeries::from_sorted_unchecked(records[..holdout_n].to_vec(), labels.clone());
    let train = HourlySeries::from_sorted_unchecked(records[holdout_n..].to_vec(), labels);
    Ok((holdout, train))
}

/// Records whose month belongs to `label`, order preserved. May be empty.
pub fn seasonal_filter(series: &HourlySeries, label: SeasonLabel) -> HourlySeries {
    let records: Vec<_> = series
        .records()
        .iter()
        .copied()
        .filter(|r| SeasonLabel::of_month(r.timestamp.month() as u8) == label)
        .collect();
    HourlySeries::from_sorted_unchecked(records, series.source_labels().to_vec())
}

/// Builds one sample per record with a contiguous trailing window of length
/// `window_len`. Windows that would span a gap are skipped. Targets are
/// scaled with `demand_scaler` when both it and the demand value are present.
pub fn make_sequences(
    series: &HourlySeries,
    window_len: usize,
    temp_scaler: &ScalerParams,
    demand_scaler: Option<&ScalerParams>,
) -> Result<Vec<SequenceSample>, FeaturesError> {
    assert!(window_len >= 1, "window length must be at least 1");
    let records = series.records();
    let mut samples = Vec::new();
    if records.len() >= window_len {
        let span = Duration::hours(window_len as i64 - 1);
        for i in (window_len - 1)..records.len() {
            let first = i + 1 - window_len;
            // Strictly increasing hourly records: the window is contiguous
            // exactly when its endpoints are L-1 hours apart.
            if records[i].timestamp - records[first].timestamp != span {
                continue;
            }
            let target = &records[i];
            let window = records[first..=i]
                .iter()
                .map(|r| apply_scaler(temp_scaler, r.temperature_c))
                .collect();
            let target_demand_scaled = match (demand_scaler, target.demand_mw) {
                (Some(scaler), Some(mw)) => Some(apply_scaler(scaler, mw)),
                _ => None,
            };
            samples.push(SequenceSample {
                target_ts: target.timestamp,
                temperature_window: window,
                target_temperature_c: target.temperature_c,
                calendar: extract_calendar(target.timestamp),
                target_demand_scaled,
                target_demand_mw: target.demand_mw,
            });
        }
    }
    if samples.is_empty() {
        return Err(FeaturesError::SeriesTooShort { len: records.len(), window: window_len });
    }
    Ok(samples)
}
