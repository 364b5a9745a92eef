use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::arch::SkipMode;
use crate::data::DEFAULT_THRESHOLD;

/// Training hyperparameters. Serialized as flat `key = value` TOML; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor applied once per epoch.
    pub lr_decay: f64,
    pub seed: u64,
    pub skip_mode: SkipMode,
    pub augmentation: bool,
    /// Epochs without improvement in validation mean OD/OC dice before stopping.
    pub early_stop_patience: usize,
    pub input_side: u32,
    pub threshold: f64,
    /// Share of the training split carved off for validation when none exists.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 2,
            learning_rate: 1e-3,
            lr_decay: 0.95,
            seed: 0,
            skip_mode: SkipMode::Concat,
            augmentation: false,
            early_stop_patience: 10,
            input_side: 640,
            threshold: DEFAULT_THRESHOLD,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let fail = |m: &str| Err(EngineError::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr_decay must lie in (0, 1]");
        }
        if self.early_stop_patience == 0 {
            return fail("early_stop_patience must be at least 1");
        }
        if self.input_side == 0 || !self.input_side.is_multiple_of(32) {
            return fail("input_side must be a positive multiple of 32");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail("threshold must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
