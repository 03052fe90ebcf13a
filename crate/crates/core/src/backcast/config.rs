//! Run configuration: one auditable file (TOML or JSON) plus repeatable
//! `key.path=value` overrides. Any override path that does not exist in the
//! schema is a hard error, so typos never pass silently.

use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ColumnSpec, ValueUnit};
use crate::neural::TrainConfig;
use crate::piecewise::FixedEffects;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("override {0:?} is not of the form key.path=value")]
    BadOverride(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputsConfig {
    pub demand_csv: PathBuf,
    pub temperature_csv: PathBuf,
    pub timestamp_column: String,
    pub value_column: String,
    pub temperature_unit: ValueUnit,
    /// Declared fixed UTC offset of the timestamps, hours. Metadata only:
    /// no DST arithmetic is ever applied.
    pub utc_offset_hours: f64,
}

impl Default for InputsConfig {
    fn default() -> Self {
        Self {
            demand_csv: "demand.csv".into(),
            temperature_csv: "temperature.csv".into(),
            timestamp_column: "timestamp".into(),
            value_column: "value".into(),
            temperature_unit: ValueUnit::Kelvin,
            utc_offset_hours: 0.0,
        }
    }
}

impl InputsConfig {
    pub fn columns(&self) -> ColumnSpec {
        ColumnSpec { timestamp: self.timestamp_column.clone(), value: self.value_column.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub holdout_frac: f64,
    pub max_missing_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { holdout_frac: 0.2, max_missing_frac: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Piecewise,
    Lstm,
    Both,
}

impl ModelKind {
    pub fn includes_piecewise(&self) -> bool {
        matches!(self, ModelKind::Piecewise | ModelKind::Both)
    }

    pub fn includes_lstm(&self) -> bool {
        matches!(self, ModelKind::Lstm | ModelKind::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeasonalMode {
    /// One model covers the whole year.
    Annual,
    /// Dedicated summer (Jul-Sep) and winter (Oct-Dec) models with the same
    /// hyperparameters; the annual model serves the remaining months.
    SummerWinter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub seasonal_mode: SeasonalMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kind: ModelKind::Both, seasonal_mode: SeasonalMode::Annual }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiecewiseConfig {
    /// Number of quantile-placed interior knots when `knots` is empty.
    pub knot_count: usize,
    /// Explicit knot override, degrees Celsius, ascending.
    pub knots: Vec<f64>,
    pub effects: FixedEffects,
}

impl Default for PiecewiseConfig {
    fn default() -> Self {
        Self { knot_count: 4, knots: Vec::new(), effects: FixedEffects::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanConfig {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl Default for SpanConfig {
    fn default() -> Self {
        Self {
            start: NaiveDateTime::parse_from_str("1980-01-01T00:00:00", "%Y-%m-%dT%H:%M:%S")
                .unwrap(),
            end: NaiveDateTime::parse_from_str("2014-12-31T23:00:00", "%Y-%m-%dT%H:%M:%S")
                .unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub emit_svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into(), emit_svg: false }
    }
}

/// The complete pipeline configuration.
///
/// `seed` drives every stochastic choice in a run; `train.seed` is derived
/// from it per trained model, so two runs with equal configs are bit-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub inputs: InputsConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub piecewise: PiecewiseConfig,
    pub train: TrainConfig,
    pub backcast: SpanConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed: Self = if is_json {
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?
        };
        parsed.validate()?;
        Ok(parsed)
    }

    /// Applies `key.path=value` overrides. The path must already exist in the
    /// serialized schema; values parse as JSON with a plain-string fallback.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), ConfigError> {
        if sets.is_empty() {
            return Ok(());
        }
        let mut tree = serde_json::to_value(&*self)
            .map_err(|e| ConfigError::Invalid(format!("serialization failed: {e}")))?;
        for set in sets {
            let (path, raw) =
                set.split_once('=').ok_or_else(|| ConfigError::BadOverride(set.clone()))?;
            let mut node = &mut tree;
            let parts: Vec<&str> = path.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let object = node
                    .as_object_mut()
                    .ok_or_else(|| ConfigError::UnknownKey(path.to_string()))?;
                if !object.contains_key(*part) {
                    return Err(ConfigError::UnknownKey(path.to_string()));
                }
                node = object.get_mut(*part).expect("key checked above");
                if i == parts.len() - 1 {
                    let parsed: serde_json::Value = serde_json::from_str(raw)
                        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
                    *node = parsed;
                }
            }
        }
        let updated: Self = serde_json::from_value(tree)
            .map_err(|e| ConfigError::Parse { path: "<overrides>".into(), detail: e.to_string() })?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.data.holdout_frac > 0.0 && self.data.holdout_frac < 1.0) {
            return Err(ConfigError::Invalid("data.holdout_frac must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.data.max_missing_frac) {
            return Err(ConfigError::Invalid("data.max_missing_frac must be in [0, 1]".into()));
        }
        if self.backcast.start > self.backcast.end {
            return Err(ConfigError::Invalid("backcast span start is after its end".into()));
        }
        if self.piecewise.knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Invalid("piecewise.knots must be strictly ascending".into()));
        }
        Ok(())
    }

    /// Training configuration for one model, with the seed derived from the
    /// run seed and a per-model tag.
    pub fn train_config_for(&self, tag: u64) -> TrainConfig {
        let mut config = self.train.clone();
        config.seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tag);
        config
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip() {
        let config = RunConfig::default();
        let text = toml::to_string(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut config = RunConfig::default();
        config
            .apply_overrides(&[
                "train.epochs=50".into(),
                "model.kind=lstm".into(),
                "output.dir=elsewhere".into(),
                "backcast.start=1990-01-01T00:00:00".into(),
            ])
            .unwrap();
        assert_eq!(config.train.epochs, 50);
        assert_eq!(config.model.kind, ModelKind::Lstm);
        assert_eq!(config.output.dir, PathBuf::from("elsewhere"));
        assert_eq!(config.backcast.start.format("%Y").to_string(), "1990");
    }

    #[test]
    fn unknown_override_key_is_hard_error() {
        let mut config = RunConfig::default();
        let err = config.apply_overrides(&["train.epoks=50".into()]);
        assert!(matches!(err, Err(ConfigError::UnknownKey(_))));
        let err = config.apply_overrides(&["nonsense=1".into()]);
        assert!(matches!(err, Err(ConfigError::UnknownKey(_))));
    }

    #[test]
    fn type_mismatch_in_override_is_error() {
        let mut config = RunConfig::default();
        let err = config.apply_overrides(&["train.epochs=often".into()]);
        assert!(matches!(err, Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn invalid_spans_rejected() {
        let mut config = RunConfig::default();
        config.backcast.start = config.backcast.end + chrono::Duration::hours(1);
        assert!(matches!(config.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn json_config_loads() {
        let config = RunConfig::default();
        let file = tempfile::NamedTempFile::with_suffix(".json").unwrap();
        std::fs::write(file.path(), serde_json::to_string(&config).unwrap()).unwrap();
        let loaded = RunConfig::from_path(file.path()).unwrap();
        assert_eq!(config, loaded);
    }
}
