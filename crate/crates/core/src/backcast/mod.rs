//! End-to-end pipeline: ingest, split, scale, train (annual or per-season),
//! back-forecast over the historical temperature span, evaluate, report.

pub mod config;
pub mod report;
mod svg;

pub use config::{ConfigError, ModelKind, RunConfig, SeasonalMode};
pub use report::{emit_report, Manifest, ManifestEntry};

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, MetricsReport};
use crate::features::{
    self, chrono_split, fit_scaler, invert_scaler, make_sequences,
    seasonal_filter, ScalerParams, SeasonLabel, SequenceSample,
};
use crate::ingest::{
    self, drop_missing_demand, join_hourly, parse_series_csv, rows_to_celsius, Gap, HourlySeries,
    ValueUnit,
};
use crate::neural::{self, LstmParams, NeuralModel, TrainTrace};
use crate::piecewise::{self, PiecewiseModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("backcast span error: {0}")]
    ConfigSpan(String),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Features(#[from] features::FeaturesError),
    #[error(transparent)]
    Piecewise(#[from] piecewise::PiecewiseError),
    #[error(transparent)]
    Neural(#[from] neural::NeuralError),
    #[error(transparent)]
    Metrics(#[from] eval::MetricsError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit code classification: 1 config/validation, 2 data,
    /// 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::ConfigSpan(_) => 1,
            PipelineError::Neural(neural::NeuralError::Diverged { .. }) => 3,
            _ => 2,
        }
    }
}

/// Which regressor produced a prediction row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    Piecewise,
    Lstm,
}

impl ModelId {
    pub fn name(&self) -> &'static str {
        match self {
            ModelId::Piecewise => "piecewise",
            ModelId::Lstm => "lstm",
        }
    }
}

/// Which training subset a model saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeasonScope {
    Annual,
    Summer,
    Winter,
}

impl SeasonScope {
    pub fn name(&self) -> &'static str {
        match self {
            SeasonScope::Annual => "annual",
            SeasonScope::Summer => "summer",
            SeasonScope::Winter => "winter",
        }
    }

    fn seed_tag(&self) -> u64 {
        match self {
            SeasonScope::Annual => 1,
            SeasonScope::Summer => 2,
            SeasonScope::Winter => 3,
        }
    }
}

/// Season-appropriate model for an hour: summer and winter hours go to their
/// dedicated models in seasonal mode, everything else to the annual model.
fn scope_for(mode: SeasonalMode, label: SeasonLabel) -> SeasonScope {
    match (mode, label) {
        (SeasonalMode::SummerWinter, SeasonLabel::Summer) => SeasonScope::Summer,
        (SeasonalMode::SummerWinter, SeasonLabel::Winter) => SeasonScope::Winter,
        _ => SeasonScope::Annual,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionRow {
    pub timestamp: NaiveDateTime,
    pub model: ModelId,
    pub season: SeasonLabel,
    pub demand_mw: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HoldoutRow {
    pub timestamp: NaiveDateTime,
    pub model: ModelId,
    pub season: SeasonLabel,
    pub predicted_mw: f64,
    pub actual_mw: f64,
    pub temperature_c: f64,
}

/// Everything a run produces, in memory; file emission happens separately in
/// [`emit_report`].
#[derive(Debug)]
pub struct BackcastResult {
    pub config: RunConfig,
    pub predictions: Vec<PredictionRow>,
    pub holdout: Vec<HoldoutRow>,
    /// Hold-out metrics per model id, seasonal slices nested inside.
    pub metrics: BTreeMap<String, MetricsReport>,
    pub piecewise_models: Vec<(SeasonScope, PiecewiseModel)>,
    pub lstm_models: Vec<(SeasonScope, NeuralModel)>,
    /// Final-epoch parameters per scope (the checkpointed best live in
    /// `lstm_models`); kept for leakage diagnostics.
    pub lstm_final_params: Vec<(SeasonScope, LstmParams)>,
    pub traces: Vec<(SeasonScope, TrainTrace)>,
    pub temp_scaler: ScalerParams,
    pub demand_scaler: ScalerParams,
    pub clamped_negative: usize,
    pub gap_index: Vec<Gap>,
    pub dropped_missing: usize,
}

/// Full run from input files named in the config.
pub fn run_backcast(config: &RunConfig) -> Result<BackcastResult, PipelineError> {
    let columns = config.inputs.columns();
    let demand = parse_series_csv(&config.inputs.demand_csv, ValueUnit::MegaWatts, &columns)?;
    let temperature = rows_to_celsius(
        parse_series_csv(
            &config.inputs.temperature_csv,
            config.inputs.temperature_unit,
            &columns,
        )?,
        config.inputs.temperature_unit,
    )?;
    let joined = join_hourly(&demand, &temperature)?;
    run_pipeline(config, &joined)
}

/// The pipeline on an already-joined series (entry point for tests and for
/// in-memory callers).
pub fn run_pipeline(
    config: &RunConfig,
    joined: &HourlySeries,
) -> Result<BackcastResult, PipelineError> {
    let splits = prepare_data(config, joined)?;
    let models = train_models(config, &splits)?;
    assemble_result(config, &splits, models)
}

/// Chronology-respecting data partitions of one run.
pub struct DataSplits {
    pub backcast_span: HourlySeries,
    pub holdout: HourlySeries,
    pub train: HourlySeries,
    pub temp_scaler: ScalerParams,
    pub demand_scaler: ScalerParams,
    pub gap_index: Vec<Gap>,
    pub dropped_missing: usize,
}

pub fn prepare_data(
    config: &RunConfig,
    joined: &HourlySeries,
) -> Result<DataSplits, PipelineError> {
    let span = &config.backcast;
    let first_demand = joined
        .records()
        .iter()
        .find(|r| r.demand_mw.is_some())
        .map(|r| r.timestamp)
        .ok_or_else(|| PipelineError::ConfigSpan("no demand data in input".into()))?;
    let last_demand = joined
        .records()
        .iter()
        .rev()
        .find(|r| r.demand_mw.is_some())
        .map(|r| r.timestamp)
        .expect("checked above");
    if first_demand <= span.end {
        return Err(PipelineError::ConfigSpan(format!(
            "backcast span must precede the training span: span ends {} but demand starts {}",
            span.end, first_demand
        )));
    }
    let backcast_span = joined.slice_span(span.start, span.end).map_err(|_| {
        PipelineError::ConfigSpan(format!(
            "temperature data does not cover the backcast span {}..{}",
            span.start, span.end
        ))
    })?;

    let train_era = joined.slice_span(first_demand, last_demand)?;
    let (train_era, dropped_missing) =
        drop_missing_demand(&train_era, config.data.max_missing_frac)?;
    let (holdout, train) = chrono_split(&train_era, config.data.holdout_frac)?;

    let train_temps: Vec<f64> = train.records().iter().map(|r| r.temperature_c).collect();
    let train_demand: Vec<f64> = train.records().iter().filter_map(|r| r.demand_mw).collect();
    let temp_scaler = fit_scaler(&train_temps)?;
    let demand_scaler = fit_scaler(&train_demand)?;

    Ok(DataSplits {
        backcast_span,
        holdout,
        train,
        temp_scaler,
        demand_scaler,
        gap_index: joined.gaps().to_vec(),
        dropped_missing,
    })
}

/// The trained models of one run.
pub struct TrainedModels {
    pub piecewise: Vec<(SeasonScope, PiecewiseModel)>,
    pub lstm: Vec<(SeasonScope, NeuralModel)>,
    pub lstm_final_params: Vec<(SeasonScope, LstmParams)>,
    pub traces: Vec<(SeasonScope, TrainTrace)>,
}

fn scopes(mode: SeasonalMode) -> Vec<SeasonScope> {
    match mode {
        SeasonalMode::Annual => vec![SeasonScope::Annual],
        SeasonalMode::SummerWinter => {
            vec![SeasonScope::Annual, SeasonScope::Summer, SeasonScope::Winter]
        }
    }
}

fn series_for_scope(series: &HourlySeries, scope: SeasonScope) -> HourlySeries {
    match scope {
        SeasonScope::Annual => series.clone(),
        SeasonScope::Summer => seasonal_filter(series, SeasonLabel::Summer),
        SeasonScope::Winter => seasonal_filter(series, SeasonLabel::Winter),
    }
}

fn samples_for_scope(samples: &[SequenceSample], scope: SeasonScope) -> Vec<SequenceSample> {
    match scope {
        SeasonScope::Annual => samples.to_vec(),
        SeasonScope::Summer => samples
            .iter()
            .filter(|s| SeasonLabel::of_month(s.calendar.month) == SeasonLabel::Summer)
            .cloned()
            .collect(),
        SeasonScope::Winter => samples
            .iter()
            .filter(|s| SeasonLabel::of_month(s.calendar.month) == SeasonLabel::Winter)
            .cloned()
            .collect(),
    }
}

pub fn train_models(
    config: &RunConfig,
    splits: &DataSplits,
) -> Result<TrainedModels, PipelineError> {
    let mut piecewise_models = Vec::new();
    let mut lstm_models = Vec::new();
    let mut lstm_final = Vec::new();
    let mut traces = Vec::new();
    let scope_list = scopes(config.model.seasonal_mode);

    if config.model.kind.includes_piecewise() {
        for &scope in &scope_list {
            let subset = series_for_scope(&splits.train, scope);
            let knots =
                if config.piecewise.knots.is_empty() { None } else { Some(config.piecewise.knots.as_slice()) };
            let model = piecewise::fit_series(
                &subset,
                config.piecewise.effects,
                knots,
                config.piecewise.knot_count,
            )?;
            piecewise_models.push((scope, model));
        }
    }

    if config.model.kind.includes_lstm() {
        let seq_len = config.train.sequence_length;
        let train_samples =
            make_sequences(&splits.train, seq_len, &splits.temp_scaler, Some(&splits.demand_scaler))?;
        let val_samples = make_sequences(
            &splits.holdout,
            seq_len,
            &splits.temp_scaler,
            Some(&splits.demand_scaler),
        )?;
        for &scope in &scope_list {
            let scoped_train = samples_for_scope(&train_samples, scope);
            let scoped_val = samples_for_scope(&val_samples, scope);
            if scoped_train.is_empty() || scoped_val.is_empty() {
                return Err(PipelineError::ConfigSpan(format!(
                    "no {} samples available for seasonal training",
                    scope.name()
                )));
            }
            let train_config = config.train_config_for(scope.seed_tag());
            let outcome =
                neural::train(&scoped_train, &scoped_val, &splits.demand_scaler, &train_config)?;
            log::info!(
                "lstm {}: best epoch {} of {}, validation RMSE {:.2} MW",
                scope.name(),
                outcome.best_epoch,
                train_config.epochs,
                outcome.best_val_rmse_mw
            );
            lstm_models.push((
                scope,
                NeuralModel {
                    version: 1,
                    config: train_config,
                    temp_scaler: splits.temp_scaler,
                    demand_scaler: splits.demand_scaler,
                    params: outcome.params,
                },
            ));
            lstm_final.push((scope, outcome.final_params));
            traces.push((scope, outcome.trace));
        }
    }

    Ok(TrainedModels {
        piecewise: piecewise_models,
        lstm: lstm_models,
        lstm_final_params: lstm_final,
        traces,
    })
}

fn find_scoped<'a, T>(models: &'a [(SeasonScope, T)], scope: SeasonScope) -> &'a T {
    models
        .iter()
        .find(|(s, _)| *s == scope)
        .map(|(_, m)| m)
        .expect("model exists for every configured scope")
}

fn assemble_result(
    config: &RunConfig,
    splits: &DataSplits,
    models: TrainedModels,
) -> Result<BackcastResult, PipelineError> {
    let mode = config.model.seasonal_mode;
    let seq_len = config.train.sequence_length;
    let mut clamped = 0usize;

    // Hold-out predictions: both models are evaluated on the same hour set
    // (hours with a full trailing window) so their metrics are comparable.
    let holdout_samples =
        make_sequences(&splits.holdout, seq_len, &splits.temp_scaler, Some(&splits.demand_scaler))?;
    let mut holdout_rows = Vec::new();
    let mut metrics = BTreeMap::new();

    let predict_holdout = |model_id: ModelId,
                           clamped: &mut usize,
                           rows: &mut Vec<HoldoutRow>|
     -> Result<MetricsReport, PipelineError> {
        let preds: Vec<f64> = match model_id {
            ModelId::Piecewise => holdout_samples
                .par_iter()
                .map(|s| {
                    let scope = scope_for(mode, SeasonLabel::of_month(s.calendar.month));
                    let model = find_scoped(&models.piecewise, scope);
                    piecewise::predict_piecewise(model, s.target_temperature_c, &s.calendar)
                })
                .collect(),
            ModelId::Lstm => holdout_samples
                .par_iter()
                .map(|s| {
                    let scope = scope_for(mode, SeasonLabel::of_month(s.calendar.month));
                    let model = find_scoped(&models.lstm, scope);
                    let scaled = neural::predict(&model.params, s).expect("validated sample");
                    invert_scaler(&model.demand_scaler, scaled)
                })
                .collect(),
        };
        let preds: Vec<f64> = preds
            .into_iter()
            .map(|p| {
                if p < 0.0 {
                    *clamped += 1;
                    0.0
                } else {
                    p
                }
            })
            .collect();
        let timestamps: Vec<NaiveDateTime> = holdout_samples.iter().map(|s| s.target_ts).collect();
        let actuals: Vec<f64> =
            holdout_samples.iter().map(|s| s.target_demand_mw.expect("hold-out demand")).collect();
        let temps: Vec<f64> = holdout_samples.iter().map(|s| s.target_temperature_c).collect();
        for (((s, &p), &a), &t) in
            holdout_samples.iter().zip(&preds).zip(&actuals).zip(&temps)
        {
            rows.push(HoldoutRow {
                timestamp: s.target_ts,
                model: model_id,
                season: SeasonLabel::of_month(s.calendar.month),
                predicted_mw: p,
                actual_mw: a,
                temperature_c: t,
            });
        }
        let predictor_count = match model_id {
            ModelId::Piecewise => {
                Some(find_scoped(&models.piecewise, SeasonScope::Annual).predictor_count())
            }
            ModelId::Lstm => None,
        };
        Ok(eval::metrics_report(&timestamps, &actuals, &preds, &temps, predictor_count)?)
    };

    if config.model.kind.includes_piecewise() {
        let report = predict_holdout(ModelId::Piecewise, &mut clamped, &mut holdout_rows)?;
        metrics.insert("piecewise".to_string(), report);
    }
    if config.model.kind.includes_lstm() {
        let report = predict_holdout(ModelId::Lstm, &mut clamped, &mut holdout_rows)?;
        metrics.insert("lstm".to_string(), report);
    }

    // Back-forecast span: one prediction per hour with full window coverage.
    let backcast_samples =
        make_sequences(&splits.backcast_span, seq_len, &splits.temp_scaler, None)?;
    let mut predictions = Vec::new();
    if config.model.kind.includes_piecewise() {
        let preds: Vec<f64> = backcast_samples
            .par_iter()
            .map(|s| {
                let scope = scope_for(mode, SeasonLabel::of_month(s.calendar.month));
                let model = find_scoped(&models.piecewise, scope);
                piecewise::predict_piecewise(model, s.target_temperature_c, &s.calendar)
            })
            .collect();
        for (s, p) in backcast_samples.iter().zip(preds) {
            let value = if p < 0.0 {
                clamped += 1;
                0.0
            } else {
                p
            };
            predictions.push(PredictionRow {
                timestamp: s.target_ts,
                model: ModelId::Piecewise,
                season: SeasonLabel::of_month(s.calendar.month),
                demand_mw: value,
            });
        }
    }
    if config.model.kind.includes_lstm() {
        let preds: Vec<f64> = backcast_samples
            .par_iter()
            .map(|s| {
                let scope = scope_for(mode, SeasonLabel::of_month(s.calendar.month));
                let model = find_scoped(&models.lstm, scope);
                let scaled = neural::predict(&model.params, s).expect("validated sample");
                invert_scaler(&model.demand_scaler, scaled)
            })
            .collect();
        for (s, p) in backcast_samples.iter().zip(preds) {
            let value = if p < 0.0 {
                clamped += 1;
                0.0
            } else {
                p
            };
            predictions.push(PredictionRow {
                timestamp: s.target_ts,
                model: ModelId::Lstm,
                season: SeasonLabel::of_month(s.calendar.month),
                demand_mw: value,
            });
        }
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} negative predictions to 0 MW");
    }

    Ok(BackcastResult {
        config: config.clone(),
        predictions,
        holdout: holdout_rows,
        metrics,
        piecewise_models: models.piecewise,
        lstm_models: models.lstm,
        lstm_final_params: models.lstm_final_params,
        traces: models.traces,
        temp_scaler: splits.temp_scaler,
        demand_scaler: splits.demand_scaler,
        clamped_negative: clamped,
        gap_index: splits.gap_index.clone(),
        dropped_missing: splits.dropped_missing,
    })
}

/// Independent calendar-hour count of an inclusive hourly span, by plain date
/// arithmetic (no datetime library), for cross-checking emitted row counts.
pub fn calendar_hour_count(
    start_year: i32,
    end_year: i32,
) -> u64 {
    fn is_leap(y: i32) -> bool {
        y % 4 == 0 && (y % 100 != 0 || y % 400 == 0)
    }
    (start_year..=end_year)
        .map(|y| if is_leap(y) { 366u64 * 24 } else { 365 * 24 })
        .sum()
}

/// Hours predictable in a span whose temperature coverage starts exactly at
/// the span start: the first `window - 1` hours lack a full trailing window.
pub fn predictable_hours(total_hours: u64, window: u64) -> u64 {
    total_hours.saturating_sub(window - 1)
}
