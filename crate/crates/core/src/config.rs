use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RstError};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub lambda_freq: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr_start: 1e-3,
            lr_end: 1e-7,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            adam_eps: 1e-8,
            batch_size: 1,
            lambda_freq: 0.1,
        }
    }
}

/// Everything a CLI invocation needs, as one JSON document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn tiny() -> Self {
        Self {
            model: ModelConfig::tiny(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if t.batch_size != 1 {
            return Err(RstError::Config("only batch_size 1 is supported".into()));
        }
        if !(t.lr_start > 0.0 && t.lr_end >= 0.0 && (0.0..1.0).contains(&t.beta1) && (0.0..1.0).contains(&t.beta2)) {
            return Err(RstError::Config("learning rates must be positive and betas in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| RstError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RstError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            RstError::Config(m) => RstError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::from_json(r#"{"seed": 5, "model": {"channels": 16}}"#).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.model.channels, 16);
        assert_eq!(c.model.blocks, vec![6, 6, 12]);
        assert_eq!(c.train.lr_start, 1e-3);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"chanels": 5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"levels": 2}}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::tiny();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
