//! Continuous piecewise-linear regression of demand on temperature.
//!
//! The temperature response is a hinge basis — `1, T, max(0, T - k_1), ...` —
//! so the fitted function is continuous across segment boundaries, plus one
//! dummy column per retained calendar fixed-effect level. Everything is fit
//! in one ordinary-least-squares solve on unscaled units: OLS is
//! scale-equivariant and knots stay interpretable in degrees Celsius.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::CalendarFeatures;
use crate::ingest::HourlySeries;
use crate::linalg::{self, Matrix};

/// Which calendar fixed effects enter the design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedEffects {
    pub hour: bool,
    pub dow: bool,
    pub month: bool,
    pub year: bool,
}

impl Default for FixedEffects {
    fn default() -> Self {
        Self { hour: true, dow: true, month: true, year: true }
    }
}

impl FixedEffects {
    pub fn none() -> Self {
        Self { hour: false, dow: false, month: false, year: false }
    }
}

/// Knot placement plus fixed-effect switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseSpec {
    /// Strictly ascending interior knot temperatures, degrees Celsius.
    pub knots: Vec<f64>,
    pub effects: FixedEffects,
}

/// The dummy level dropped per fixed effect to avoid collinearity with the
/// intercept: hour 0, Monday, January, and the earliest training year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLevels {
    pub hour: u8,
    pub day_of_week: u8,
    pub month: u8,
    pub year: i32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Column {
    Intercept,
    Temperature,
    Hinge(f64),
    Hour(u8),
    Dow(u8),
    Month(u8),
    Year(i32),
}

impl Column {
    fn name(&self) -> String {
        match self {
            Column::Intercept => "intercept".into(),
            Column::Temperature => "temperature_c".into(),
            Column::Hinge(k) => format!("hinge_{k}"),
            Column::Hour(h) => format!("hour_{h}"),
            Column::Dow(d) => format!("dow_{d}"),
            Column::Month(m) => format!("month_{m}"),
            Column::Year(y) => format!("year_{y}"),
        }
    }
}

/// Deterministic column ordering for a spec and a year vocabulary.
#[derive(Debug, Clone, PartialEq)]
struct DesignLayout {
    columns: Vec<Column>,
    reference: ReferenceLevels,
    year_levels: Vec<i32>,
}

impl DesignLayout {
    /// Columns in order: intercept, temperature, hinges by ascending knot,
    /// hour 1..=23, day-of-week 1..=6, month 2..=12, then non-reference years
    /// ascending.
    fn new(spec: &PiecewiseSpec, year_levels: Vec<i32>) -> Self {
        let reference_year = year_levels.first().copied().unwrap_or(0);
        let mut columns = vec![Column::Intercept, Column::Temperature];
        columns.extend(spec.knots.iter().map(|k| Column::Hinge(*k)));
        if spec.effects.hour {
            columns.extend((1..=23).map(Column::Hour));
        }
        if spec.effects.dow {
            columns.extend((1..=6).map(Column::Dow));
        }
        if spec.effects.month {
            columns.extend((2..=12).map(Column::Month));
        }
        if spec.effects.year {
            columns.extend(year_levels.iter().skip(1).map(|y| Column::Year(*y)));
        }
        let reference =
            ReferenceLevels { hour: 0, day_of_week: 0, month: 1, year: reference_year };
        Self { columns, reference, year_levels }
    }

    fn fill_row(&self, temperature_c: f64, cal: &CalendarFeatures, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.columns.len());
        // Out-of-vocabulary years collapse onto the reference year, keeping
        // the year effect fixed when extrapolating backwards.
        let year = if self.year_levels.contains(&cal.year) { cal.year } else { self.reference.year };
        for (slot, column) in out.iter_mut().zip(&self.columns) {
            *slot = match column {
                Column::Intercept => 1.0,
                Column::Temperature => temperature_c,
                Column::Hinge(k) => (temperature_c - k).max(0.0),
                Column::Hour(h) => f64::from(cal.hour == *h),
                Column::Dow(d) => f64::from(cal.day_of_week == *d),
                Column::Month(m) => f64::from(cal.month == *m),
                Column::Year(y) => f64::from(year == *y),
            };
        }
    }
}

/// A fitted hinge-basis model.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseModel {
    pub spec: PiecewiseSpec,
    pub coefficients: Vec<f64>,
    pub reference: ReferenceLevels,
    pub year_levels: Vec<i32>,
    pub rank_deficient: bool,
    layout: DesignLayout,
}

#[derive(Debug, Error)]
pub enum PiecewiseError {
    #[error("empty input")]
    EmptyInput,
    #[error("series carries no demand values")]
    NoDemand,
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error("artifact parse error: {0}")]
    Artifact(String),
}

/// `k` interior knots at equally spaced quantiles of the empirical
/// distribution (order-statistic interpolation). Duplicate knots, and knots
/// that fail to split the observed range, are collapsed away.
pub fn select_knots(temps: &[f64], k: usize) -> Result<Vec<f64>, PiecewiseError> {
    if temps.is_empty() {
        return Err(PiecewiseError::EmptyInput);
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut sorted = temps.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let mut knots = Vec::with_capacity(k);
    for i in 1..=k {
        let q = i as f64 / (k + 1) as f64;
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        let value = if lo + 1 < sorted.len() {
            sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
        } else {
            sorted[lo]
        };
        if value > min && value < max && knots.last() != Some(&value) {
            knots.push(value);
        }
    }
    Ok(knots)
}

/// One design row per record: `[1, T, max(0, T-k_1), ..., dummies]` with one
/// reference level dropped per effect. The year vocabulary is taken from the
/// records themselves.
pub fn build_design_matrix(records: &[(f64, CalendarFeatures)], spec: &PiecewiseSpec) -> Matrix {
    let layout = DesignLayout::new(spec, year_vocabulary(records.iter().map(|(_, c)| c.year)));
    let mut rows = Vec::with_capacity(records.len());
    for (temp, cal) in records {
        let mut row = vec![0.0; layout.columns.len()];
        layout.fill_row(*temp, cal, &mut row);
        rows.push(row);
    }
    Matrix::from_rows(rows)
}

fn year_vocabulary(years: impl Iterator<Item = i32>) -> Vec<i32> {
    let mut levels: Vec<i32> = years.collect();
    levels.sort_unstable();
    levels.dedup();
    levels
}

/// Least-squares coefficients for an explicit design matrix. Rank deficiency
/// is flagged, not fatal: the minimum-norm solution comes back.
pub fn fit_ols(x: &Matrix, y: &[f64]) -> Result<linalg::LeastSquares, PiecewiseError> {
    Ok(linalg::solve_least_squares(x, y)?)
}

/// Fits the full model on paired observations.
pub fn fit(
    records: &[(f64, CalendarFeatures)],
    demand_mw: &[f64],
    spec: &PiecewiseSpec,
) -> Result<PiecewiseModel, PiecewiseError> {
    if records.is_empty() {
        return Err(PiecewiseError::EmptyInput);
    }
    assert_eq!(records.len(), demand_mw.len());
    let layout = DesignLayout::new(spec, year_vocabulary(records.iter().map(|(_, c)| c.year)));
    let mut rows = Vec::with_capacity(records.len());
    for (temp, cal) in records {
        let mut row = vec![0.0; layout.columns.len()];
        layout.fill_row(*temp, cal, &mut row);
        rows.push(row);
    }
    let x = Matrix::from_rows(rows);
    let solution = linalg::solve_least_squares(&x, demand_mw)?;
    if solution.rank_deficient {
        log::warn!(
            "piecewise design matrix is rank deficient (rank {} of {}); minimum-norm fit returned",
            solution.rank,
            x.cols()
        );
    }
    Ok(PiecewiseModel {
        spec: spec.clone(),
        coefficients: solution.coefficients,
        reference: layout.reference,
        year_levels: layout.year_levels.clone(),
        rank_deficient: solution.rank_deficient,
        layout,
    })
}

/// Fits on an hourly series, using quantile knots when the spec has none.
pub fn fit_series(
    series: &HourlySeries,
    effects: FixedEffects,
    explicit_knots: Option<&[f64]>,
    knot_count: usize,
) -> Result<PiecewiseModel, PiecewiseError> {
    let mut records = Vec::new();
    let mut demand = Vec::new();
    for rec in series.records() {
        if let Some(mw) = rec.demand_mw {
            records.push((rec.temperature_c, crate::features::extract_calendar(rec.timestamp)));
            demand.push(mw);
        }
    }
    if demand.is_empty() {
        return Err(PiecewiseError::NoDemand);
    }
    let knots = match explicit_knots {
        Some(k) => k.to_vec(),
        None => {
            let temps: Vec<f64> = records.iter().map(|(t, _)| *t).collect();
            select_knots(&temps, knot_count)?
        }
    };
    let spec = PiecewiseSpec { knots, effects };
    fit(&records, &demand, &spec)
}

/// Demand estimate in MW for one observation.
pub fn predict_piecewise(model: &PiecewiseModel, temperature_c: f64, cal: &CalendarFeatures) -> f64 {
    let mut row = vec![0.0; model.layout.columns.len()];
    model.layout.fill_row(temperature_c, cal, &mut row);
    linalg::dot(&row, &model.coefficients)
}

impl PiecewiseModel {
    pub fn column_names(&self) -> Vec<String> {
        self.layout.columns.iter().map(Column::name).collect()
    }

    /// Predictor count excluding the intercept, as used by adjusted R².
    pub fn predictor_count(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn to_json(&self) -> String {
        let artifact = PiecewiseArtifact {
            version: 1,
            spec: self.spec.clone(),
            year_levels: self.year_levels.clone(),
            reference: self.reference,
            columns: self.column_names(),
            coefficients: self.coefficients.clone(),
            rank_deficient: self.rank_deficient,
        };
        serde_json::to_string_pretty(&artifact).expect("piecewise artifact serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PiecewiseError> {
        let artifact: PiecewiseArtifact =
            serde_json::from_str(text).map_err(|e| PiecewiseError::Artifact(e.to_string()))?;
        let layout = DesignLayout::new(&artifact.spec, artifact.year_levels.clone());
        if layout.columns.len() != artifact.coefficients.len() {
            return Err(PiecewiseError::Artifact(format!(
                "coefficient count {} does not match layout of {} columns",
                artifact.coefficients.len(),
                layout.columns.len()
            )));
        }
        Ok(Self {
            spec: artifact.spec,
            coefficients: artifact.coefficients,
            reference: artifact.reference,
            year_levels: artifact.year_levels,
            rank_deficient: artifact.rank_deficient,
            layout,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PiecewiseArtifact {
    version: u32,
    spec: PiecewiseSpec,
    year_levels: Vec<i32>,
    reference: ReferenceLevels,
    columns: Vec<String>,
    coefficients: Vec<f64>,
    rank_deficient: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cal(hour: u8, dow: u8, month: u8, year: i32) -> CalendarFeatures {
        CalendarFeatures { hour, day_of_week: dow, month, year }
    }

    fn no_effects_spec(knots: Vec<f64>) -> PiecewiseSpec {
        PiecewiseSpec { knots, effects: FixedEffects::none() }
    }

    #[test]
    fn knots_median() {
        assert_eq!(select_knots(&[1.0, 2.0, 3.0, 4.0, 5.0], 1).unwrap(), vec![3.0]);
    }

    #[test]
    fn knots_zero_is_plain_linear() {
        assert_eq!(select_knots(&[1.0, 9.0], 0).unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn knots_constant_data_collapse() {
        assert_eq!(select_knots(&[2.0, 2.0, 2.0, 2.0], 3).unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn knots_empty_errors() {
        assert!(matches!(select_knots(&[], 2), Err(PiecewiseError::EmptyInput)));
    }

    #[test]
    fn design_rows() {
        let spec = no_effects_spec(vec![20.0]);
        let c = cal(0, 0, 1, 2015);
        let x = build_design_matrix(&[(25.0, c), (15.0, c)], &spec);
        assert_eq!(x.row(0), &[1.0, 25.0, 5.0]);
        assert_eq!(x.row(1), &[1.0, 15.0, 0.0]);

        let plain = build_design_matrix(&[(7.0, c)], &no_effects_spec(vec![]));
        assert_eq!(plain.row(0), &[1.0, 7.0]);
    }

    #[test]
    fn ols_exact_line() {
        let x = Matrix::from_rows(vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]);
        let fit = fit_ols(&x, &[1.0, 3.0, 5.0]).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-10);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn ols_hinge_interpolates_abs() {
        let xs = [-2.0f64, -1.0, 0.0, 1.0, 2.0];
        let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![1.0, *x, x.max(0.0)]).collect();
        let y: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
        let fit = fit_ols(&Matrix::from_rows(rows), &y).unwrap();
        assert!((fit.coefficients[0]).abs() < 1e-10);
        assert!((fit.coefficients[1] + 1.0).abs() < 1e-10);
        assert!((fit.coefficients[2] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn ols_recovers_exact_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> =
            (0..40).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let x = Matrix::from_rows(rows.clone());
        let beta = [3.0, -1.0];
        let y: Vec<f64> = rows.iter().map(|r| r[0] * beta[0] + r[1] * beta[1]).collect();
        let fit = fit_ols(&x, &y).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-10);
        assert!((fit.coefficients[1] + 1.0).abs() < 1e-10);
    }

    fn abs_model() -> PiecewiseModel {
        // y = |T| expressed in the hinge basis with a knot at 0.
        let xs = [-2.0f64, -1.0, 0.0, 1.0, 2.0];
        let records: Vec<(f64, CalendarFeatures)> =
            xs.iter().map(|x| (*x, cal(0, 0, 1, 2015))).collect();
        let y: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
        fit(&records, &y, &no_effects_spec(vec![0.0])).unwrap()
    }

    #[test]
    fn predict_examples() {
        let model = abs_model();
        let c = cal(0, 0, 1, 2015);
        assert!((predict_piecewise(&model, 1.5, &c) - 1.5).abs() < 1e-9);
        assert!((predict_piecewise(&model, -2.0, &c) - 2.0).abs() < 1e-9);

        let mut zero = abs_model();
        zero.coefficients.iter_mut().for_each(|c| *c = 0.0);
        assert_eq!(predict_piecewise(&zero, 42.0, &c), 0.0);
    }

    #[test]
    fn prediction_is_continuous_at_knots() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let records: Vec<(f64, CalendarFeatures)> = (0..200)
            .map(|i| (rng.random_range(-10.0..40.0), cal((i % 24) as u8, (i % 7) as u8, (i % 12 + 1) as u8, 2015)))
            .collect();
        let y: Vec<f64> =
            records.iter().map(|(t, _)| 100.0 + 3.0 * t + rng.random_range(-1.0..1.0)).collect();
        let spec = PiecewiseSpec { knots: vec![0.0, 15.0, 25.0], effects: FixedEffects::default() };
        let model = fit(&records, &y, &spec).unwrap();
        let c = cal(3, 2, 6, 2015);
        for knot in &model.spec.knots {
            let eps = 1e-6;
            let below = predict_piecewise(&model, knot - eps, &c);
            let above = predict_piecewise(&model, knot + eps, &c);
            assert!(
                (below - above).abs() < 1e-3,
                "discontinuity at knot {knot}: {below} vs {above}"
            );
        }
    }

    #[test]
    fn adding_knot_never_increases_sse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let records: Vec<(f64, CalendarFeatures)> =
            (0..300).map(|_| (rng.random_range(-5.0..35.0), cal(0, 0, 1, 2015))).collect();
        let y: Vec<f64> = records
            .iter()
            .map(|(t, _)| 50.0 + 2.0 * t + 4.0 * (t - 20.0).max(0.0) + rng.random_range(-3.0..3.0))
            .collect();
        let sse = |knots: Vec<f64>| {
            let model = fit(&records, &y, &no_effects_spec(knots)).unwrap();
            records
                .iter()
                .zip(&y)
                .map(|((t, c), target)| {
                    let r = target - predict_piecewise(&model, *t, c);
                    r * r
                })
                .sum::<f64>()
        };
        let coarse = sse(vec![15.0]);
        let fine = sse(vec![15.0, 22.0]);
        assert!(fine <= coarse * (1.0 + 1e-8), "nested SSE violated: {fine} > {coarse}");
    }

    #[test]
    fn out_of_vocabulary_year_maps_to_reference() {
        let records: Vec<(f64, CalendarFeatures)> = (0..48)
            .map(|i| (10.0 + i as f64 / 3.0, cal(0, 0, 1, 2015 + (i % 2) as i32)))
            .collect();
        let y: Vec<f64> = records.iter().map(|(t, c)| 5.0 * t + f64::from(c.year - 2015) * 40.0).collect();
        let spec = PiecewiseSpec {
            knots: vec![],
            effects: FixedEffects { hour: false, dow: false, month: false, year: true },
        };
        let model = fit(&records, &y, &spec).unwrap();
        assert_eq!(model.reference.year, 2015);
        let ancient = predict_piecewise(&model, 20.0, &cal(0, 0, 1, 1980));
        let reference = predict_piecewise(&model, 20.0, &cal(0, 0, 1, 2015));
        assert!((ancient - reference).abs() < 1e-9);
    }

    #[test]
    fn artifact_roundtrip() {
        let model = abs_model();
        let json = model.to_json();
        let restored = PiecewiseModel::from_json(&json).unwrap();
        assert_eq!(model, restored);
    }
}
