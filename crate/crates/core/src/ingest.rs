//! Parsing, validation and joining of raw hourly demand/temperature files.
//!
//! Input files are UTF-8 CSV with a header row naming a timestamp column and
//! a value column (names configurable). Timestamps are civil datetimes in one
//! declared fixed UTC offset per dataset; no DST arithmetic is ever applied,
//! so an hour never silently duplicates or disappears at a transition.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::{Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Plausibility bounds for screened temperatures, in degrees Celsius.
/// Catches unit mistakes such as Kelvin values passed through unconverted.
pub const TEMP_MIN_C: f64 = -90.0;
pub const TEMP_MAX_C: f64 = 70.0;

/// Declared unit of a value column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueUnit {
    #[serde(rename = "mw")]
    MegaWatts,
    Kelvin,
    Celsius,
}

/// Column names expected in an input CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub timestamp: String,
    pub value: String,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self { timestamp: "timestamp".into(), value: "value".into() }
    }
}

/// One row of an input file: a civil timestamp plus an optional finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSeriesRow {
    pub timestamp: NaiveDateTime,
    pub value: Option<f64>,
}

/// One joined observation at hourly resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HourlyRecord {
    /// Truncated to the hour: minutes and seconds are always zero.
    pub timestamp: NaiveDateTime,
    /// Megawatts; absent over spans where demand is unknown (the backcast era)
    /// or where the source file had an unusable cell.
    pub demand_mw: Option<f64>,
    pub temperature_c: f64,
}

/// A run of absent hours between two consecutive records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub first_missing: NaiveDateTime,
    pub last_missing: NaiveDateTime,
    pub missing_hours: u64,
}

/// A time-ordered hourly series with an explicit gap index.
///
/// Invariants (enforced at construction): timestamps strictly increase, and
/// every jump larger than one hour between consecutive records is recorded in
/// the gap index. The series is immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    records: Vec<HourlyRecord>,
    gaps: Vec<Gap>,
    source_labels: Vec<String>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: String, detail: String },
    #[error("bad timestamp at line {line}: {text:?}")]
    BadTimestamp { line: u64, text: String },
    #[error("kelvin value below absolute zero: {0}")]
    NegativeKelvin(f64),
    #[error("empty input series")]
    EmptyInput,
    #[error("no temperature available for demand hour {0}")]
    MissingTemperature(NaiveDateTime),
    #[error("missing demand fraction {actual:.4} exceeds threshold {threshold:.4}")]
    TooManyMissing { actual: f64, threshold: f64 },
    #[error("temperature {value} degC at {timestamp} outside plausible range [{TEMP_MIN_C}, {TEMP_MAX_C}]")]
    TemperatureOutOfRange { timestamp: NaiveDateTime, value: f64 },
    #[error("negative demand {value} MW at {timestamp}")]
    NegativeDemand { timestamp: NaiveDateTime, value: f64 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl fmt::Display for ValueUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueUnit::MegaWatts => write!(f, "MW"),
            ValueUnit::Kelvin => write!(f, "K"),
            ValueUnit::Celsius => write!(f, "degC"),
        }
    }
}

/// Accepted timestamp layouts, tried in order.
const TS_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];

pub(crate) fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let text = text.trim();
    TS_FORMATS.iter().find_map(|fmt| NaiveDateTime::parse_from_str(text, fmt).ok())
}

/// Parses one series file. Values that fail to parse as finite floats (or
/// empty cells) become missing markers; a timestamp that fails to parse is a
/// hard error carrying the 1-based file line number.
///
/// `value_unit` is the unit declared for the file; values are returned as-is
/// (see [`rows_to_celsius`] for Kelvin conversion).
pub fn parse_series_csv(
    path: &Path,
    _value_unit: ValueUnit,
    columns: &ColumnSpec,
) -> Result<Vec<RawSeriesRow>, IngestError> {
    if !path.exists() {
        return Err(IngestError::FileNotFound(path.display().to_string()));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let ts_idx = headers
        .iter()
        .position(|h| h.trim() == columns.timestamp)
        .ok_or_else(|| IngestError::MalformedHeader {
            path: path.display().to_string(),
            detail: format!("missing timestamp column {:?}", columns.timestamp),
        })?;
    let val_idx = headers
        .iter()
        .position(|h| h.trim() == columns.value)
        .ok_or_else(|| IngestError::MalformedHeader {
            path: path.display().to_string(),
            detail: format!("missing value column {:?}", columns.value),
        })?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i as u64 + 2; // header occupies line 1
        let ts_text = record.get(ts_idx).unwrap_or("");
        let timestamp = parse_timestamp(ts_text)
            .ok_or_else(|| IngestError::BadTimestamp { line, text: ts_text.to_string() })?;
        let value = record
            .get(val_idx)
            .and_then(|cell| cell.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite());
        rows.push(RawSeriesRow { timestamp, value });
    }
    Ok(rows)
}

/// Serializes rows back to the same CSV schema `parse_series_csv` reads.
pub fn write_series_csv(
    path: &Path,
    rows: &[RawSeriesRow],
    columns: &ColumnSpec,
) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([columns.timestamp.as_str(), columns.value.as_str()])?;
    for row in rows {
        let value = match row.value {
            Some(v) => format!("{v}"),
            None => String::new(),
        };
        writer.write_record([format_timestamp(row.timestamp), value])?;
    }
    writer.flush()?;
    Ok(())
}

pub(crate) fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Kelvin to Celsius. Errors below absolute zero.
pub fn kelvin_to_celsius(t_k: f64) -> Result<f64, IngestError> {
    if t_k < 0.0 {
        return Err(IngestError::NegativeKelvin(t_k));
    }
    Ok(t_k - 273.15)
}

/// Converts a parsed series to Celsius according to its declared unit.
/// `MegaWatts` rows pass through untouched.
pub fn rows_to_celsius(
    rows: Vec<RawSeriesRow>,
    unit: ValueUnit,
) -> Result<Vec<RawSeriesRow>, IngestError> {
    match unit {
        ValueUnit::Celsius | ValueUnit::MegaWatts => Ok(rows),
        ValueUnit::Kelvin => rows
            .into_iter()
            .map(|row| {
                let value = row.value.map(kelvin_to_celsius).transpose()?;
                Ok(RawSeriesRow { timestamp: row.timestamp, value })
            })
            .collect(),
    }
}

fn truncate_to_hour(ts: NaiveDateTime) -> NaiveDateTime {
    ts.with_minute(0).unwrap().with_second(0).unwrap().with_nanosecond(0).unwrap()
}

/// Deduplicating hour map: keeps the first occurrence per hour, counts the rest.
fn hour_map(rows: &[RawSeriesRow]) -> (BTreeMap<NaiveDateTime, Option<f64>>, usize) {
    let mut map = BTreeMap::new();
    let mut duplicates = 0usize;
    for row in rows {
        let hour = truncate_to_hour(row.timestamp);
        if map.contains_key(&hour) {
            duplicates += 1;
        } else {
            map.insert(hour, row.value);
        }
    }
    (map, duplicates)
}

impl HourlySeries {
    /// Builds a series from records, sorting by timestamp, keeping the first
    /// record per hour and indexing every gap larger than one hour.
    pub fn from_records(
        mut records: Vec<HourlyRecord>,
        source_labels: Vec<String>,
    ) -> Result<Self, IngestError> {
        if records.is_empty() {
            return Err(IngestError::EmptyInput);
        }
        records.sort_by_key(|r| r.timestamp);
        let mut deduped: Vec<HourlyRecord> = Vec::with_capacity(records.len());
        let mut duplicates = 0usize;
        for rec in records {
            let rec = HourlyRecord { timestamp: truncate_to_hour(rec.timestamp), ..rec };
            match deduped.last() {
                Some(last) if last.timestamp == rec.timestamp => duplicates += 1,
                _ => deduped.push(rec),
            }
        }
        if duplicates > 0 {
            log::warn!("dropped {duplicates} duplicate timestamps (kept first occurrence)");
        }
        let gaps = index_gaps(&deduped);
        Ok(Self { records: deduped, gaps, source_labels })
    }

    pub fn records(&self) -> &[HourlyRecord] {
        &self.records
    }

    pub fn gaps(&self) -> &[Gap] {
        &self.gaps
    }

    pub fn source_labels(&self) -> &[String] {
        &self.source_labels
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first_timestamp(&self) -> Option<NaiveDateTime> {
        self.records.first().map(|r| r.timestamp)
    }

    pub fn last_timestamp(&self) -> Option<NaiveDateTime> {
        self.records.last().map(|r| r.timestamp)
    }

    /// New series restricted to `[start, end]` inclusive. Order preserved.
    pub fn slice_span(&self, start: NaiveDateTime, end: NaiveDateTime) -> Result<Self, IngestError> {
        let records: Vec<_> = self
            .records
            .iter()
            .copied()
            .filter(|r| r.timestamp >= start && r.timestamp <= end)
            .collect();
        Self::from_records(records, self.source_labels.clone())
    }

    /// Internal constructor for slices already known to be ordered/deduped.
    pub(crate) fn from_sorted_unchecked(records: Vec<HourlyRecord>, source_labels: Vec<String>) -> Self {
        debug_assert!(records.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        let gaps = index_gaps(&records);
        Self { records, gaps, source_labels }
    }
}

fn index_gaps(records: &[HourlyRecord]) -> Vec<Gap> {
    let mut gaps = Vec::new();
    for pair in records.windows(2) {
        let delta = pair[1].timestamp - pair[0].timestamp;
        let hours = delta.num_hours();
        if hours > 1 {
            gaps.push(Gap {
                first_missing: pair[0].timestamp + Duration::hours(1),
                last_missing: pair[1].timestamp - Duration::hours(1),
                missing_hours: (hours - 1) as u64,
            });
        }
    }
    gaps
}

/// Joins demand and temperature rows into one hourly series.
///
/// Every hour with a temperature reading is emitted; hours carrying demand in
/// the input inherit that value, the rest stay `None` (the backcast span).
/// A demand hour without a matching temperature reading is an error — the
/// reanalysis temperature record is expected to be complete over the span.
/// The demand list may be empty (a temperature-only backcast span).
pub fn join_hourly(
    demand: &[RawSeriesRow],
    temperature: &[RawSeriesRow],
) -> Result<HourlySeries, IngestError> {
    if temperature.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let (temp_map, temp_dups) = hour_map(temperature);
    let (demand_map, demand_dups) = hour_map(demand);
    if temp_dups + demand_dups > 0 {
        log::warn!(
            "duplicate hours in input: {temp_dups} temperature, {demand_dups} demand (kept first)"
        );
    }

    for hour in demand_map.keys() {
        match temp_map.get(hour) {
            Some(Some(_)) => {}
            _ => return Err(IngestError::MissingTemperature(*hour)),
        }
    }

    let mut records = Vec::with_capacity(temp_map.len());
    let mut skipped_missing_temp = 0usize;
    for (hour, temp) in &temp_map {
        let Some(temperature_c) = *temp else {
            skipped_missing_temp += 1;
            continue;
        };
        if !(TEMP_MIN_C..=TEMP_MAX_C).contains(&temperature_c) {
            return Err(IngestError::TemperatureOutOfRange {
                timestamp: *hour,
                value: temperature_c,
            });
        }
        let demand_mw = demand_map.get(hour).copied().flatten();
        if let Some(d) = demand_mw {
            if d < 0.0 {
                return Err(IngestError::NegativeDemand { timestamp: *hour, value: d });
            }
        }
        records.push(HourlyRecord { timestamp: *hour, demand_mw, temperature_c });
    }
    if skipped_missing_temp > 0 {
        log::warn!("skipped {skipped_missing_temp} hours with unusable temperature cells");
    }
    HourlySeries::from_records(records, vec!["joined".into()])
}

/// Removes records whose demand is missing, erroring when the missing
/// fraction exceeds `max_missing_frac`.
///
/// Apply this to the training-era series only: over the backcast span demand
/// is missing by design and must not be counted against the threshold.
pub fn drop_missing_demand(
    series: &HourlySeries,
    max_missing_frac: f64,
) -> Result<(HourlySeries, usize), IngestError> {
    assert!((0.0..=1.0).contains(&max_missing_frac), "threshold must be in [0, 1]");
    if series.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let total = series.len();
    let missing = series.records().iter().filter(|r| r.demand_mw.is_none()).count();
    let fraction = missing as f64 / total as f64;
    if fraction > max_missing_frac {
        return Err(IngestError::TooManyMissing { actual: fraction, threshold: max_missing_frac });
    }
    let kept: Vec<_> = series.records().iter().copied().filter(|r| r.demand_mw.is_some()).collect();
    let series = HourlySeries::from_sorted_unchecked(kept, series.source_labels().to_vec());
    Ok((series, missing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use std::io::Write;

    fn ts(text: &str) -> NaiveDateTime {
        parse_timestamp(text).unwrap()
    }

    fn row(text: &str, value: Option<f64>) -> RawSeriesRow {
        RawSeriesRow { timestamp: ts(text), value }
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(content.as_bytes()).unwrap();
        file
    }

    #[test]
    fn parses_plain_rows() {
        let file = write_tmp("timestamp,value\n2015-01-01T00:00,3100.5\n");
        let rows = parse_series_csv(file.path(), ValueUnit::MegaWatts, &ColumnSpec::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].timestamp, ts("2015-01-01T00:00"));
        assert_eq!(rows[0].value, Some(3100.5));
    }

    #[test]
    fn empty_cell_is_missing_marker() {
        let file = write_tmp("timestamp,value\n2015-01-01T01:00,\n");
        let rows = parse_series_csv(file.path(), ValueUnit::MegaWatts, &ColumnSpec::default()).unwrap();
        assert_eq!(rows[0].value, None);
    }

    #[test]
    fn bad_timestamp_is_error_with_line() {
        let file = write_tmp("timestamp,value\nnot-a-date,5\n");
        let err = parse_series_csv(file.path(), ValueUnit::MegaWatts, &ColumnSpec::default());
        match err {
            Err(IngestError::BadTimestamp { line, text }) => {
                assert_eq!(line, 2);
                assert_eq!(text, "not-a-date");
            }
            other => panic!("expected BadTimestamp, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_malformed_header() {
        let file = write_tmp("time,demand\n2015-01-01T00:00,1\n");
        let err = parse_series_csv(file.path(), ValueUnit::MegaWatts, &ColumnSpec::default());
        assert!(matches!(err, Err(IngestError::MalformedHeader { .. })));
    }

    #[test]
    fn missing_file_is_file_not_found() {
        let err = parse_series_csv(
            Path::new("/nonexistent/input.csv"),
            ValueUnit::MegaWatts,
            &ColumnSpec::default(),
        );
        assert!(matches!(err, Err(IngestError::FileNotFound(_))));
    }

    #[test]
    fn kelvin_examples() {
        assert_eq!(kelvin_to_celsius(273.15).unwrap(), 0.0);
        assert_eq!(kelvin_to_celsius(0.0).unwrap(), -273.15);
        assert!((kelvin_to_celsius(300.0).unwrap() - 26.85).abs() < 1e-12);
        assert!(matches!(kelvin_to_celsius(-1.0), Err(IngestError::NegativeKelvin(_))));
    }

    proptest! {
        #[test]
        fn kelvin_roundtrip_within_one_ulp(x in -80.0f64..60.0) {
            let back = kelvin_to_celsius(x + 273.15).unwrap();
            let ulp = f64::max(x.abs(), 273.15) * f64::EPSILON;
            prop_assert!((back - x).abs() <= ulp);
        }

        #[test]
        fn join_output_strictly_increasing(mut hours in proptest::collection::vec(0i64..500, 2..60)) {
            // Shuffled, possibly duplicated input hours must come out ordered.
            let base = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
            hours.reverse();
            let temp: Vec<_> = hours
                .iter()
                .map(|h| RawSeriesRow { timestamp: base + Duration::hours(*h), value: Some(10.0) })
                .collect();
            let joined = join_hourly(&[], &temp).unwrap();
            prop_assert!(joined.records().windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        }
    }

    #[test]
    fn join_exact_match() {
        let demand = vec![row("2015-01-01T00:00", Some(1.0)), row("2015-01-01T01:00", Some(2.0)), row("2015-01-01T02:00", Some(3.0))];
        let temp = vec![row("2015-01-01T00:00", Some(5.0)), row("2015-01-01T01:00", Some(6.0)), row("2015-01-01T02:00", Some(7.0))];
        let joined = join_hourly(&demand, &temp).unwrap();
        assert_eq!(joined.len(), 3);
        assert!(joined.records().iter().all(|r| r.demand_mw.is_some()));
    }

    #[test]
    fn join_backcast_span_keeps_temperature_only_hours() {
        let temp = vec![
            row("1980-01-01T00:00", Some(5.0)),
            row("1980-01-01T01:00", Some(6.0)),
            row("1980-01-01T02:00", Some(7.0)),
            row("1980-01-01T03:00", Some(8.0)),
            row("1980-01-01T04:00", Some(9.0)),
        ];
        let joined = join_hourly(&[], &temp).unwrap();
        assert_eq!(joined.len(), 5);
        assert!(joined.records().iter().all(|r| r.demand_mw.is_none()));
    }

    #[test]
    fn join_missing_temperature_is_error() {
        let demand = vec![row("2015-01-01T05:00", Some(1.0))];
        let temp = vec![row("2015-01-01T00:00", Some(5.0))];
        match join_hourly(&demand, &temp) {
            Err(IngestError::MissingTemperature(t)) => assert_eq!(t, ts("2015-01-01T05:00")),
            other => panic!("expected MissingTemperature, got {other:?}"),
        }
    }

    #[test]
    fn join_rejects_implausible_temperature() {
        let temp = vec![row("2015-01-01T00:00", Some(280.0))]; // Kelvin slipped through
        assert!(matches!(
            join_hourly(&[], &temp),
            Err(IngestError::TemperatureOutOfRange { .. })
        ));
    }

    #[test]
    fn join_rejects_negative_demand() {
        let demand = vec![row("2015-01-01T00:00", Some(-3.0))];
        let temp = vec![row("2015-01-01T00:00", Some(5.0))];
        assert!(matches!(join_hourly(&demand, &temp), Err(IngestError::NegativeDemand { .. })));
    }

    fn series_with_missing(total: usize, missing: usize) -> HourlySeries {
        let base = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let records: Vec<_> = (0..total)
            .map(|i| HourlyRecord {
                timestamp: base + Duration::hours(i as i64),
                demand_mw: if i < missing { None } else { Some(100.0 + i as f64) },
                temperature_c: 10.0,
            })
            .collect();
        HourlySeries::from_records(records, vec!["test".into()]).unwrap()
    }

    #[test]
    fn drop_missing_counts() {
        let (series, dropped) = drop_missing_demand(&series_with_missing(100, 1), 0.05).unwrap();
        assert_eq!(series.len(), 99);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn drop_missing_identity_when_clean() {
        let input = series_with_missing(100, 0);
        let (series, dropped) = drop_missing_demand(&input, 0.05).unwrap();
        assert_eq!(series.len(), 100);
        assert_eq!(dropped, 0);
        assert_eq!(series.records(), input.records());
    }

    #[test]
    fn drop_missing_over_threshold_errors() {
        match drop_missing_demand(&series_with_missing(100, 10), 0.05) {
            Err(IngestError::TooManyMissing { actual, .. }) => {
                assert!((actual - 0.10).abs() < 1e-12);
            }
            other => panic!("expected TooManyMissing, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn drop_missing_never_removes_present(total in 2usize..60, missing in 0usize..30) {
            let missing = missing.min(total);
            let series = series_with_missing(total, missing);
            if let Ok((kept, dropped)) = drop_missing_demand(&series, 1.0) {
                prop_assert_eq!(dropped, missing);
                prop_assert_eq!(kept.len(), total - missing);
                prop_assert!(kept.records().iter().all(|r| r.demand_mw.is_some()));
            }
        }
    }

    #[test]
    fn gap_index_records_holes() {
        let records = vec![
            HourlyRecord { timestamp: ts("2015-01-01T00:00"), demand_mw: None, temperature_c: 1.0 },
            HourlyRecord { timestamp: ts("2015-01-01T01:00"), demand_mw: None, temperature_c: 1.0 },
            HourlyRecord { timestamp: ts("2015-01-01T05:00"), demand_mw: None, temperature_c: 1.0 },
        ];
        let series = HourlySeries::from_records(records, vec![]).unwrap();
        assert_eq!(series.gaps().len(), 1);
        let gap = series.gaps()[0];
        assert_eq!(gap.first_missing, ts("2015-01-01T02:00"));
        assert_eq!(gap.last_missing, ts("2015-01-01T04:00"));
        assert_eq!(gap.missing_hours, 3);
    }

    #[test]
    fn csv_roundtrip_preserves_rows() {
        let rows = vec![
            row("2015-01-01T00:00", Some(3100.5)),
            row("2015-01-01T01:00", None),
            row("2015-01-01T02:00", Some(0.125)),
        ];
        let file = tempfile::NamedTempFile::new().unwrap();
        write_series_csv(file.path(), &rows, &ColumnSpec::default()).unwrap();
        let reparsed =
            parse_series_csv(file.path(), ValueUnit::MegaWatts, &ColumnSpec::default()).unwrap();
        assert_eq!(rows, reparsed);
    }
}
