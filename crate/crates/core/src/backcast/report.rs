//! File emission: predictions, hold-out detail, metrics, summary tables in
//! the units the figures use (gigawatts), optional SVG quick-looks, and a
//! manifest of every artifact with content hashes.
//!
//! Training traces contain wall-time; their manifest hash is computed over a
//! timing-stripped rendering so two identical runs produce identical
//! manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDateTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::svg::{Chart, Series};
use super::{BackcastResult, HoldoutRow, ModelId, PipelineError, PredictionRow};
use crate::eval::{grouped_stats, top_k_hours, GroupKey, GroupStat};
use crate::features::SeasonLabel;
use crate::ingest::format_timestamp;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
    /// True when the hash was computed over timing-stripped content.
    pub timing_stripped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub artifacts: Vec<ManifestEntry>,
}

fn sha256_hex(data: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data);
    format!("{:x}", hasher.finalize())
}

struct Emitter {
    outdir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Emitter {
    fn new(outdir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(outdir)?;
        Ok(Self { outdir: outdir.to_path_buf(), entries: Vec::new() })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<(), PipelineError> {
        self.write_with_hash(name, content, content, false)
    }

    /// Writes `content` but hashes `hash_content` (used to exclude timing).
    fn write_with_hash(
        &mut self,
        name: &str,
        content: &str,
        hash_content: &str,
        timing_stripped: bool,
    ) -> Result<(), PipelineError> {
        let path = self.outdir.join(name);
        std::fs::write(&path, content)?;
        self.entries.push(ManifestEntry {
            path: name.to_string(),
            bytes: content.len() as u64,
            sha256: sha256_hex(hash_content.as_bytes()),
            timing_stripped,
        });
        Ok(())
    }
}

fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("timestamp,model,season,demand_mw\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            format_timestamp(r.timestamp),
            r.model.name(),
            r.season.name(),
            r.demand_mw
        ));
    }
    out
}

fn holdout_csv(rows: &[HoldoutRow]) -> String {
    let mut out = String::from("timestamp,model,season,predicted_mw,actual_mw,temperature_c\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            format_timestamp(r.timestamp),
            r.model.name(),
            r.season.name(),
            r.predicted_mw,
            r.actual_mw,
            r.temperature_c
        ));
    }
    out
}

/// Order-statistic quantile with linear interpolation.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    } else {
        sorted[lo]
    }
}

/// Per-year distribution summary (GW) of one model's predictions in one
/// season over the backcast span.
fn seasonal_distribution_csv(rows: &[PredictionRow], model: ModelId, season: SeasonLabel) -> String {
    let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.model == model && r.season == season) {
        by_year.entry(r.timestamp.year()).or_default().push(r.demand_mw / 1000.0);
    }
    let mut out = String::from("year,min_gw,q1_gw,median_gw,q3_gw,max_gw,hours\n");
    for (year, mut values) in by_year {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push_str(&format!(
            "{year},{},{},{},{},{},{}\n",
            values[0],
            quantile(&values, 0.25),
            quantile(&values, 0.5),
            quantile(&values, 0.75),
            values[values.len() - 1],
            values.len()
        ));
    }
    out
}

struct HourlyStats {
    max_gw: Vec<f64>,
    mean_gw: Vec<f64>,
    se_gw: Vec<f64>,
}

fn hourly_stats(points: &[(NaiveDateTime, f64)]) -> HourlyStats {
    let to_map = |stat: GroupStat| -> BTreeMap<i64, f64> {
        grouped_stats(points, GroupKey::HourOfDay, stat)
            .into_iter()
            .map(|r| (r.group, r.value))
            .collect()
    };
    let max = to_map(GroupStat::Max);
    let mean = to_map(GroupStat::Mean);
    let se = to_map(GroupStat::StdError);
    let pull = |m: &BTreeMap<i64, f64>| (0..24).map(|h| m.get(&h).copied().unwrap_or(f64::NAN)).collect();
    HourlyStats { max_gw: pull(&max), mean_gw: pull(&mean), se_gw: pull(&se) }
}

/// Hold-out per-hour-of-day table: model predictions against ground truth,
/// max and mean with the standard error of the mean, in GW.
fn holdout_hourly_csv(rows: &[HoldoutRow], model: ModelId, season: SeasonLabel) -> String {
    let slice: Vec<&HoldoutRow> =
        rows.iter().filter(|r| r.model == model && r.season == season).collect();
    let predicted: Vec<(NaiveDateTime, f64)> =
        slice.iter().map(|r| (r.timestamp, r.predicted_mw / 1000.0)).collect();
    let actual: Vec<(NaiveDateTime, f64)> =
        slice.iter().map(|r| (r.timestamp, r.actual_mw / 1000.0)).collect();
    let p = hourly_stats(&predicted);
    let a = hourly_stats(&actual);
    let mut out = String::from(
        "hour,actual_max_gw,actual_mean_gw,actual_se_gw,predicted_max_gw,predicted_mean_gw,predicted_se_gw\n",
    );
    for h in 0..24 {
        out.push_str(&format!(
            "{h},{},{},{},{},{},{}\n",
            a.max_gw[h], a.mean_gw[h], a.se_gw[h], p.max_gw[h], p.mean_gw[h], p.se_gw[h]
        ));
    }
    out
}

/// Twenty largest back-forecasted hours per calendar year, in GW.
fn top_k_csv(rows: &[PredictionRow], model: ModelId, k: usize) -> String {
    let points: Vec<(NaiveDateTime, f64)> = rows
        .iter()
        .filter(|r| r.model == model)
        .map(|r| (r.timestamp, r.demand_mw))
        .collect();
    let top = top_k_hours(&points, k, true);
    let mut out = String::from("year,rank,timestamp,demand_gw\n");
    let mut rank = 0usize;
    let mut year = i32::MIN;
    for (ts, mw) in top {
        if ts.year() != year {
            year = ts.year();
            rank = 0;
        }
        rank += 1;
        out.push_str(&format!("{year},{rank},{},{}\n", format_timestamp(ts), mw / 1000.0));
    }
    out
}

fn season_models(rows: &[PredictionRow]) -> Vec<ModelId> {
    let mut out = Vec::new();
    if rows.iter().any(|r| r.model == ModelId::Piecewise) {
        out.push(ModelId::Piecewise);
    }
    if rows.iter().any(|r| r.model == ModelId::Lstm) {
        out.push(ModelId::Lstm);
    }
    out
}

fn distribution_chart(rows: &[PredictionRow], model: ModelId, season: SeasonLabel) -> Chart {
    let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.model == model && r.season == season) {
        by_year.entry(r.timestamp.year()).or_default().push(r.demand_mw / 1000.0);
    }
    let mut min_pts = Vec::new();
    let mut med_pts = Vec::new();
    let mut max_pts = Vec::new();
    for (year, mut values) in by_year {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        min_pts.push((year as f64, values[0]));
        med_pts.push((year as f64, quantile(&values, 0.5)));
        max_pts.push((year as f64, values[values.len() - 1]));
    }
    Chart {
        title: format!("Back-forecasted {} demand distribution, {}", season.name(), model.name()),
        x_label: "year".into(),
        y_label: "demand (GW)".into(),
        series: vec![
            Series { label: "max".into(), points: max_pts, line: true },
            Series { label: "median".into(), points: med_pts, line: true },
            Series { label: "min".into(), points: min_pts, line: true },
        ],
    }
}

fn holdout_hourly_chart(rows: &[HoldoutRow], model: ModelId, season: SeasonLabel) -> Chart {
    let slice: Vec<&HoldoutRow> =
        rows.iter().filter(|r| r.model == model && r.season == season).collect();
    let actual: Vec<(NaiveDateTime, f64)> =
        slice.iter().map(|r| (r.timestamp, r.actual_mw / 1000.0)).collect();
    let predicted: Vec<(NaiveDateTime, f64)> =
        slice.iter().map(|r| (r.timestamp, r.predicted_mw / 1000.0)).collect();
    let a = hourly_stats(&actual);
    let p = hourly_stats(&predicted);
    let line = |values: &[f64]| values.iter().enumerate().map(|(h, v)| (h as f64, *v)).collect();
    let band_hi: Vec<(f64, f64)> =
        a.mean_gw.iter().zip(&a.se_gw).enumerate().map(|(h, (m, s))| (h as f64, m + s)).collect();
    let band_lo: Vec<(f64, f64)> =
        a.mean_gw.iter().zip(&a.se_gw).enumerate().map(|(h, (m, s))| (h as f64, m - s)).collect();
    Chart {
        title: format!("Hold-out {} demand by hour, {}", season.name(), model.name()),
        x_label: "hour of day".into(),
        y_label: "demand (GW)".into(),
        series: vec![
            Series { label: "actual max".into(), points: line(&a.max_gw), line: true },
            Series { label: "predicted max".into(), points: line(&p.max_gw), line: true },
            Series { label: "actual mean +se".into(), points: band_hi, line: true },
            Series { label: "actual mean -se".into(), points: band_lo, line: true },
            Series { label: "predicted mean".into(), points: line(&p.mean_gw), line: true },
        ],
    }
}

fn top_k_chart(rows: &[PredictionRow], model: ModelId, k: usize) -> Chart {
    let points: Vec<(NaiveDateTime, f64)> = rows
        .iter()
        .filter(|r| r.model == model)
        .map(|r| (r.timestamp, r.demand_mw))
        .collect();
    let top = top_k_hours(&points, k, true);
    Chart {
        title: format!("{k} largest back-forecasted hours per year, {}", model.name()),
        x_label: "year".into(),
        y_label: "demand (GW)".into(),
        series: vec![Series {
            label: format!("top {k} hours"),
            points: top.iter().map(|(ts, mw)| (ts.year() as f64, mw / 1000.0)).collect(),
            line: false,
        }],
    }
}

/// Writes every artifact of a completed run under `outdir` and returns the
/// manifest (also written as `manifest.json`).
pub fn emit_report(result: &BackcastResult, outdir: &Path) -> Result<Manifest, PipelineError> {
    let mut em = Emitter::new(outdir)?;
    let emit_svg = result.config.output.emit_svg;

    em.write("predictions.csv", &predictions_csv(&result.predictions))?;
    em.write("holdout_predictions.csv", &holdout_csv(&result.holdout))?;
    em.write("metrics.json", &serde_json::to_string_pretty(&result.metrics).unwrap())?;
    em.write(
        "gaps.json",
        &serde_json::to_string_pretty(&result.gap_index).unwrap(),
    )?;

    for (scope, model) in &result.piecewise_models {
        em.write(&format!("model_piecewise_{}.json", scope.name()), &model.to_json())?;
    }
    for (scope, model) in &result.lstm_models {
        em.write(&format!("model_lstm_{}.json", scope.name()), &model.to_json())?;
    }
    for (scope, trace) in &result.traces {
        em.write_with_hash(
            &format!("trace_lstm_{}.csv", scope.name()),
            &trace.to_csv(),
            &trace.to_csv_without_timing(),
            true,
        )?;
    }

    for model in season_models(&result.predictions) {
        for season in [SeasonLabel::Summer, SeasonLabel::Winter] {
            em.write(
                &format!("seasonal_distribution_{}_{}.csv", model.name(), season.name()),
                &seasonal_distribution_csv(&result.predictions, model, season),
            )?;
            if emit_svg {
                em.write(
                    &format!("fig_seasonal_distribution_{}_{}.svg", model.name(), season.name()),
                    &distribution_chart(&result.predictions, model, season).render(),
                )?;
            }
        }
        em.write(&format!("top20_{}.csv", model.name()), &top_k_csv(&result.predictions, model, 20))?;
        if emit_svg {
            em.write(
                &format!("fig_top20_{}.svg", model.name()),
                &top_k_chart(&result.predictions, model, 20).render(),
            )?;
        }
    }
    for model in season_models(
        &result
            .holdout
            .iter()
            .map(|r| PredictionRow {
                timestamp: r.timestamp,
                model: r.model,
                season: r.season,
                demand_mw: r.predicted_mw,
            })
            .collect::<Vec<_>>(),
    ) {
        for season in [SeasonLabel::Summer, SeasonLabel::Winter] {
            if !result.holdout.iter().any(|r| r.model == model && r.season == season) {
                continue;
            }
            em.write(
                &format!("holdout_hourly_{}_{}.csv", model.name(), season.name()),
                &holdout_hourly_csv(&result.holdout, model, season),
            )?;
            if emit_svg {
                em.write(
                    &format!("fig_holdout_hourly_{}_{}.svg", model.name(), season.name()),
                    &holdout_hourly_chart(&result.holdout, model, season).render(),
                )?;
            }
        }
    }

    let config_json = result.config.to_canonical_json();
    em.write("config_resolved.json", &config_json)?;

    let mut entries = em.entries;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        version: 1,
        seed: result.config.seed,
        config_sha256: sha256_hex(config_json.as_bytes()),
        artifacts: entries,
    };
    std::fs::write(
        outdir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )?;
    Ok(manifest)
}

/// Recomputes the derived tables, figures and manifest from previously
/// emitted `predictions.csv` and `holdout_predictions.csv` without retraining.
pub fn emit_report_from_files(
    config: &super::RunConfig,
    outdir: &Path,
) -> Result<Manifest, PipelineError> {
    let predictions = read_predictions_csv(&outdir.join("predictions.csv"))?;
    let holdout = read_holdout_csv(&outdir.join("holdout_predictions.csv"))?;
    let mut em = Emitter::new(outdir)?;

    for model in season_models(&predictions) {
        for season in [SeasonLabel::Summer, SeasonLabel::Winter] {
            em.write(
                &format!("seasonal_distribution_{}_{}.csv", model.name(), season.name()),
                &seasonal_distribution_csv(&predictions, model, season),
            )?;
            if config.output.emit_svg {
                em.write(
                    &format!("fig_seasonal_distribution_{}_{}.svg", model.name(), season.name()),
                    &distribution_chart(&predictions, model, season).render(),
                )?;
            }
        }
        em.write(&format!("top20_{}.csv", model.name()), &top_k_csv(&predictions, model, 20))?;
    }
    for season in [SeasonLabel::Summer, SeasonLabel::Winter] {
        for model in [ModelId::Piecewise, ModelId::Lstm] {
            if holdout.iter().any(|r| r.model == model && r.season == season) {
                em.write(
                    &format!("holdout_hourly_{}_{}.csv", model.name(), season.name()),
                    &holdout_hourly_csv(&holdout, model, season),
                )?;
            }
        }
    }

    let config_json = config.to_canonical_json();
    let mut entries = em.entries;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        version: 1,
        seed: config.seed,
        config_sha256: sha256_hex(config_json.as_bytes()),
        artifacts: entries,
    };
    std::fs::write(
        outdir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )?;
    Ok(manifest)
}

fn parse_model(name: &str) -> Option<ModelId> {
    match name {
        "piecewise" => Some(ModelId::Piecewise),
        "lstm" => Some(ModelId::Lstm),
        _ => None,
    }
}

fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>, PipelineError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_io)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_io)?;
        let timestamp = crate::ingest::parse_timestamp(&record[0])
            .ok_or_else(|| PipelineError::ConfigSpan(format!("bad timestamp {:?}", &record[0])))?;
        let Some(model) = parse_model(&record[1]) else { continue };
        rows.push(PredictionRow {
            timestamp,
            model,
            season: SeasonLabel::of_month(timestamp.month() as u8),
            demand_mw: record[3].parse().unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}

fn read_holdout_csv(path: &Path) -> Result<Vec<HoldoutRow>, PipelineError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_io)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_io)?;
        let timestamp = crate::ingest::parse_timestamp(&record[0])
            .ok_or_else(|| PipelineError::ConfigSpan(format!("bad timestamp {:?}", &record[0])))?;
        let Some(model) = parse_model(&record[1]) else { continue };
        rows.push(HoldoutRow {
            timestamp,
            model,
            season: SeasonLabel::of_month(timestamp.month() as u8),
            predicted_mw: record[3].parse().unwrap_or(f64::NAN),
            actual_mw: record[4].parse().unwrap_or(f64::NAN),
            temperature_c: record[5].parse().unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}

fn csv_io(e: csv::Error) -> PipelineError {
    PipelineError::Ingest(crate::ingest::IngestError::Csv(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let values = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&values, 0.0), 1.0);
        assert_eq!(quantile(&values, 0.5), 3.0);
        assert_eq!(quantile(&values, 1.0), 5.0);
        assert_eq!(quantile(&values, 0.25), 2.0);
    }

    #[test]
    fn std_error_two_values() {
        assert!((crate::eval::std_error(&[1.0, 3.0]) - 1.0).abs() < 1e-12);
    }
}
