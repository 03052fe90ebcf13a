//! Evaluation metrics and grouped statistics for back-forecast reports.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::SeasonLabel;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("target vector is constant; R^2 undefined")]
    ConstantTarget,
    #[error("not enough degrees of freedom: n = {n}, p = {p}")]
    DegreesOfFreedom { n: usize, p: usize },
    #[error("all targets are zero; MAPE undefined")]
    AllTargetsZero,
    #[error("constant input; rank correlation undefined")]
    ConstantInput,
}

/// Hold-out accuracy summary. `adjusted_r2` is populated only for models with
/// a well-defined predictor count (the linear one); `p` records that count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse_mw: f64,
    pub r2: f64,
    pub adjusted_r2: Option<f64>,
    pub mape_percent: f64,
    /// Count of zero-demand hours excluded from the MAPE mean.
    pub mape_excluded_zeros: usize,
    pub spearman_temp_demand: f64,
    pub n: usize,
    pub p: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_season: BTreeMap<String, MetricsReport>,
}

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<(), MetricsError> {
    if y.len() != yhat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

/// Root mean squared error, in the units of the inputs.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(y, yhat)?;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// `1 - SS_res / SS_tot` with the total sum of squares about the mean of `y`.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(y, yhat)?;
    if y.len() < 2 {
        return Err(MetricsError::DegreesOfFreedom { n: y.len(), p: 0 });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ConstantTarget);
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// `1 - (1 - R^2)(n - 1) / (n - p - 1)`; requires `n > p + 1`.
pub fn adjusted_r_squared(y: &[f64], yhat: &[f64], p: usize) -> Result<f64, MetricsError> {
    let n = y.len();
    if n <= p + 1 {
        return Err(MetricsError::DegreesOfFreedom { n, p });
    }
    let r2 = r_squared(y, yhat)?;
    Ok(1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - p as f64 - 1.0))
}

/// Mean absolute percentage error, in percent. Hours with zero actual demand
/// are excluded from the mean; the count of exclusions is returned alongside.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<(f64, usize), MetricsError> {
    check_lengths(y, yhat)?;
    let mut sum = 0.0;
    let mut kept = 0usize;
    for (a, b) in y.iter().zip(yhat) {
        if *a == 0.0 {
            continue;
        }
        sum += ((a - b) / a).abs();
        kept += 1;
    }
    if kept == 0 {
        return Err(MetricsError::AllTargetsZero);
    }
    Ok((100.0 * sum / kept as f64, y.len() - kept))
}

/// Average ranks, ties sharing the mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean.
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ConstantInput);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation: Pearson correlation of average-ranked data.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(x, y)?;
    if x.len() < 2 {
        return Err(MetricsError::EmptyInput);
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Grouping key for [`grouped_stats`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    HourOfDay,
    Year,
}

/// Statistic computed per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupStat {
    Max,
    Mean,
    StdError,
}

/// One output row of [`grouped_stats`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupRow {
    pub group: i64,
    pub value: f64,
    pub count: usize,
}

/// Groups `(timestamp, value)` points by hour-of-day or year and reduces each
/// group. Standard error is the sample standard deviation (n-1 denominator)
/// over the square root of the group size.
pub fn grouped_stats(
    points: &[(NaiveDateTime, f64)],
    key: GroupKey,
    stat: GroupStat,
) -> Vec<GroupRow> {
    let mut groups: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for (ts, value) in points {
        let group = match key {
            GroupKey::HourOfDay => ts.hour() as i64,
            GroupKey::Year => ts.year() as i64,
        };
        groups.entry(group).or_default().push(*value);
    }
    groups
        .into_iter()
        .map(|(group, values)| {
            let count = values.len();
            let value = match stat {
                GroupStat::Max => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                GroupStat::Mean => values.iter().sum::<f64>() / count as f64,
                GroupStat::StdError => std_error(&values),
            };
            GroupRow { group, value, count }
        })
        .collect()
}

pub(crate) fn std_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// The `k` largest values, globally or per calendar year, descending with
/// ties broken by the earlier timestamp. Returns fewer rows on short data.
pub fn top_k_hours(
    points: &[(NaiveDateTime, f64)],
    k: usize,
    per_year: bool,
) -> Vec<(NaiveDateTime, f64)> {
    assert!(k >= 1, "k must be at least 1");
    let take_top = |mut chunk: Vec<(NaiveDateTime, f64)>| {
        chunk.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        chunk.truncate(k);
        chunk
    };
    if per_year {
        let mut by_year: BTreeMap<i32, Vec<(NaiveDateTime, f64)>> = BTreeMap::new();
        for p in points {
            by_year.entry(p.0.year()).or_default().push(*p);
        }
        by_year.into_values().flat_map(take_top).collect()
    } else {
        take_top(points.to_vec())
    }
}

/// Full hold-out report: accuracy metrics plus the temperature-demand rank
/// correlation, sliced per season when timestamps are provided.
pub fn metrics_report(
    timestamps: &[NaiveDateTime],
    y: &[f64],
    yhat: &[f64],
    temperature_c: &[f64],
    predictor_count: Option<usize>,
) -> Result<MetricsReport, MetricsError> {
    check_lengths(y, yhat)?;
    let overall = single_report(y, yhat, temperature_c, predictor_count)?;
    let mut per_season = BTreeMap::new();
    for label in SeasonLabel::ALL {
        let idx: Vec<usize> = timestamps
            .iter()
            .enumerate()
            .filter(|(_, ts)| SeasonLabel::of_month(ts.month() as u8) == label)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < 2 {
            continue;
        }
        let take = |src: &[f64]| idx.iter().map(|&i| src[i]).collect::<Vec<_>>();
        if let Ok(report) =
            single_report(&take(y), &take(yhat), &take(temperature_c), predictor_count)
        {
            per_season.insert(label.name().to_string(), report);
        }
    }
    Ok(MetricsReport { per_season, ..overall })
}

fn single_report(
    y: &[f64],
    yhat: &[f64],
    temperature_c: &[f64],
    predictor_count: Option<usize>,
) -> Result<MetricsReport, MetricsError> {
    let (mape_percent, mape_excluded_zeros) = mape(y, yhat)?;
    let p = predictor_count.unwrap_or(0);
    let adjusted_r2 = match predictor_count {
        Some(p) => adjusted_r_squared(y, yhat, p).ok(),
        None => None,
    };
    Ok(MetricsReport {
        rmse_mw: rmse(y, yhat)?,
        r2: r_squared(y, yhat)?,
        adjusted_r2,
        mape_percent,
        mape_excluded_zeros,
        spearman_temp_demand: spearman(temperature_c, y).unwrap_or(f64::NAN),
        n: y.len(),
        p,
        per_season: BTreeMap::new(),
    })
}
