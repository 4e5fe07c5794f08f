use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contrast::DEFAULT_TAU;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

/// Training hyperparameters. Absent keys take their defaults; unknown keys
/// are rejected.
///
/// The toy defaults (lr 0.05, 50 epochs, batch 1) suit desk-scale corpora.
/// Full-scale runs with a pretrained encoder would use roughly lr 2e-5,
/// batch 16 and 20 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the scope-interaction contrastive loss.
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub tau: f64,
    pub seed: u64,
    /// Divide each row of the syntactic adjacency by its sum.
    pub syn_row_normalize: bool,
    /// Add the learned position-mixing layer on top of the embeddings.
    pub mixing: bool,
    pub mix_radius: usize,
    /// Keep encoder parameters at their initial values.
    pub freeze_encoder: bool,
    /// Share of samples held out for per-epoch evaluation.
    pub dev_fraction: f64,
    /// Replace every scope with the whole sentence.
    pub ablate_scope: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            lr: 0.05,
            epochs: 50,
            batch_size: 1,
            dim: 16,
            layers: 4,
            tau: DEFAULT_TAU,
            seed: 0,
            syn_row_normalize: false,
            mixing: true,
            mix_radius: 3,
            freeze_encoder: false,
            dev_fraction: 0.2,
            ablate_scope: false,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!(
                "lambda must be a finite non-negative number, got {}",
                self.lambda
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.dim == 0 || self.layers == 0 {
            return fail("epochs, batch_size, dim and layers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return fail(format!(
                "dev_fraction must lie in [0, 1), got {}",
                self.dev_fraction
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_keys_take_defaults() {
        let c = TrainConfig::from_json(r#"{"seed": 7}"#).unwrap();
        assert_eq!(c.lambda, 0.2);
        assert_eq!(c.seed, 7);
        assert_eq!(c.layers, 4);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(TrainConfig::from_json(r#"{"lamda": 0.1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"lambda": -0.1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"tau": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"dev_fraction": 1.0}"#).is_err());
    }
}
