//! The declarative run configuration shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::ReportOptions;
use crate::trainer::TrainConfig;
use crate::transe::TranseConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// System the significance markers compare against, a measured run or
    /// a row of the baseline table.
    pub reference: Option<String>,
    pub include_baselines: bool,
    pub include_published: bool,
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let o = ReportOptions::default();
        Self {
            reference: o.reference,
            include_baselines: o.include_baselines,
            include_published: o.include_published,
            alpha: o.alpha,
        }
    }
}

/// Everything a run depends on. Serialized into every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// When set, replaces the seeds of the `pretrain` and `train` sections.
    pub seed: Option<u64>,
    pub ks: Vec<usize>,
    pub pretrain: TranseConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_root: None,
            output_dir: PathBuf::from("runs"),
            seed: None,
            ks: vec![5, 10],
            pretrain: TranseConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ks.is_empty() || self.ks.iter().any(|&k| k != 5 && k != 10) {
            return Err(ConfigError::Invalid(format!(
                "ks must be a nonempty subset of [5, 10], got {:?}",
                self.ks
            )));
        }
        if self.pretrain.dim == 0 {
            return Err(ConfigError::Invalid("pretrain.dim must be at least 1".into()));
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(ConfigError::Invalid("eval.alpha must lie in (0, 1)".into()));
        }
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn pretrain_config(&self) -> TranseConfig {
        TranseConfig {
            seed: self.seed.unwrap_or(self.pretrain.seed),
            ..self.pretrain.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed.unwrap_or(self.train.seed),
            ..self.train.clone()
        }
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            ks: self.ks.clone(),
            reference: self.eval.reference.clone(),
            include_baselines: self.eval.include_baselines,
            include_published: self.eval.include_published,
            alpha: self.eval.alpha,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.ks, vec![5, 10]);
        assert_eq!(c.pretrain.dim, 100);
        assert_eq!(c.train.epochs, 200);
        assert_eq!(c.train.layers, 6);
        assert_eq!(c.eval.reference.as_deref(), Some("ESA"));
    }

    #[test]
    fn sections_and_seed_override() {
        let c = RunConfig::from_toml(
            "seed = 3\nks = [5]\n[train]\nvariant = \"a5\"\nepochs = 7\n[pretrain]\ndim = 16\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(c.train_config().seed, 3);
        assert_eq!(c.pretrain_config().seed, 3);
        assert_eq!(c.train.variant, Variant::A5);
        assert_eq!(c.train_config().model_config(16, 4).layers, 1);
        assert_eq!(c.pretrain.dim, 16);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "ks = [7]",
            "[train]\nepochs = 0",
            "[train]\nvariant = \"a9\"",
            "[train]\nlearning_rate = 1.0",
            "[eval]\nalpha = 2.0",
        ] {
            assert!(RunConfig::from_toml(bad).is_err(), "{bad}");
        }
    }
}
