//! Training configuration: optimization knobs plus every ablation switch.

use crate::error::{Error, Result};
use crate::mixup::MixupConfig;
use crate::model::ModelConfig;
use crate::objective::LossWeights;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate of the DDPM's own optimizer (defaults to
    /// `learning_rate`).
    pub ddpm_learning_rate: Option<f64>,
    pub seed: u64,
    pub model: ModelConfig,
    /// Mixup is off when absent; warmup gating only applies when configured.
    pub mixup: Option<MixupConfig>,
    pub loss: LossWeights,
    /// Fraction of each subject's training trials used to fit normalization
    /// statistics (at least 2 per subject are always taken).
    pub stats_fraction: f64,
    /// Route reconstruction-loss gradients through the reverse diffusion
    /// chain instead of treating the denoised target as a constant.
    pub couple_recon_target: bool,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            learning_rate: 1e-3,
            ddpm_learning_rate: None,
            seed: 1,
            model,
            mixup: None,
            loss: LossWeights::default(),
            stats_fraction: 1.0,
            couple_recon_target: false,
        }
    }

    pub fn ddpm_lr(&self) -> f64 {
        self.ddpm_learning_rate.unwrap_or(self.learning_rate)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 || self.ddpm_lr() <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0 < self.stats_fraction && self.stats_fraction <= 1.0) {
            return Err(Error::Config("stats_fraction must lie in (0, 1]".into()));
        }
        self.model.validate()?;
        self.loss.validate()?;
        if let Some(mixup) = &self.mixup {
            mixup.validate(self.model.timepoints)?;
            if !(self.model.use_ddpm && self.model.use_decoder) {
                return Err(Error::Config(
                    "mixup blends x, x_hat, and the decoder output, so it requires \
                     use_ddpm = true and use_decoder = true"
                        .into(),
                ));
            }
        }
        if self.couple_recon_target && !self.model.use_ddpm {
            return Err(Error::Config(
                "couple_recon_target requires use_ddpm = true".into(),
            ));
        }
        Ok(())
    }
}
