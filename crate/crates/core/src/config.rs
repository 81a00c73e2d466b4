//! Run configuration shared by training, evaluation and experiments.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::featurize::WindowSpec;
use crate::gbdt::GbdtParams;
use crate::nn::NetConfig;
use crate::optim::OptimizerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config value for {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Use `tau` as given.
    Fixed,
    /// Pick the score quantile that flags `target_hot_fraction` of the
    /// held-out training rows as hot.
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub mode: ThresholdMode,
    pub tau: f64,
    pub target_hot_fraction: f64,
    /// Trailing fraction of each sub-model's rows kept out of training and
    /// used for calibration; 0 calibrates on the training rows themselves.
    pub holdout_fraction: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            mode: ThresholdMode::Fixed,
            tau: 0.5,
            target_hot_fraction: 0.2,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub windows: WindowSpec,
    /// Fraction of each labeling period marked hot.
    pub label_quantile: f64,
    /// Post-release days counted when labeling evaluation contents.
    pub label_days: u32,
    /// Length of the release periods used for decision times and folds.
    pub period_days: u32,
    pub optimizer: OptimizerConfig,
    pub net: NetConfig,
    pub gbdt: GbdtParams,
    pub threshold: ThresholdConfig,
    /// Score periods with an undefined metric as zero instead of skipping
    /// them.
    pub undefined_metric_as_zero: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            windows: WindowSpec::default(),
            label_quantile: 0.2,
            label_days: 10,
            period_days: 10,
            optimizer: OptimizerConfig::default(),
            net: NetConfig::default(),
            gbdt: GbdtParams::default(),
            threshold: ThresholdConfig::default(),
            undefined_metric_as_zero: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, reason: String| ConfigError::Invalid { field, reason };
        self.windows
            .validate()
            .map_err(|e| invalid("windows", e.to_string()))?;
        if !(self.label_quantile > 0.0 && self.label_quantile < 1.0) {
            return Err(invalid("label_quantile", "must be in (0, 1)".into()));
        }
        if self.label_days == 0 {
            return Err(invalid("label_days", "must be positive".into()));
        }
        if self.period_days == 0 {
            return Err(invalid("period_days", "must be positive".into()));
        }
        self.optimizer
            .validate()
            .map_err(|e| invalid("optimizer", e.to_string()))?;
        self.net.validate().map_err(|e| invalid("net", e.to_string()))?;
        self.gbdt.validate().map_err(|e| invalid("gbdt", e.to_string()))?;
        let t = &self.threshold;
        if !(t.tau > 0.0 && t.tau <= 1.0) {
            return Err(invalid("threshold.tau", "must be in (0, 1]".into()));
        }
        if !(t.target_hot_fraction > 0.0 && t.target_hot_fraction <= 1.0) {
            return Err(invalid(
                "threshold.target_hot_fraction",
                "must be in (0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&t.holdout_fraction) {
            return Err(invalid("threshold.holdout_fraction", "must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
