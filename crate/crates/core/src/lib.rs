//! Reconstruction of long hourly electricity demand series from temperature
//! and calendar fixed effects.
//!
//! The library trains two regressors on a recent window of hourly demand —
//! a continuous piecewise-linear (hinge basis) model solved by least squares,
//! and a single-layer LSTM with categorical embeddings trained from scratch —
//! and uses them to back-forecast demand over a multi-decade historical span
//! for which only temperature is available.
//!
//! Module map:
//! - [`ingest`] — CSV parsing, unit conversion, joining demand/temperature.
//! - [`features`] — calendar fixed effects, min-max scaling, chronological
//!   splits, seasonal labels, sliding-window sequences.
//! - [`piecewise`] — hinge-basis regression with fixed-effect dummies.
//! - [`neural`] — the LSTM regressor, Adam/SGD, training loop, gradient check.
//! - [`eval`] — RMSE, R², adjusted R², MAPE, Spearman, grouped statistics.
//! - [`synth`] — synthetic scenario generator used as a ground-truth oracle.
//! - [`backcast`] — end-to-end pipeline orchestration and report emission.
//! - [`cli`] — command-line entry points.

pub mod backcast;
pub mod cli;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod linalg;
pub mod neural;
pub mod piecewise;
pub mod synth;

pub use features::{CalendarFeatures, ScalerParams, SeasonLabel, SequenceSample};
pub use ingest::{HourlyRecord, HourlySeries, RawSeriesRow};
