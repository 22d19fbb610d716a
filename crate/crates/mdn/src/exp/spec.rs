//! Experiment configuration: a JSON document naming the data source, split
//! parameters, seeds, and a grid of named training configurations. Every
//! field beyond the grid names carries a default, so a minimal experiment is
//! a few lines.

use crate::data::{SplitParams, SyntheticSpec};
use crate::error::{Error, Result};
use crate::mixup::{MixupConfig, RatioMode};
use crate::model::{
    ClassifierSpec, Conditioning, DecoderInputSpec, DiffusionConfig, EncoderInput, InferenceMode,
    ModelConfig,
};
use crate::objective::{ClassificationKind, LossWeights};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Archive(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitDto {
    pub unseen_subjects: Vec<String>,
    pub val_fraction: Option<f64>,
    pub seen_test_fraction: Option<f64>,
    pub calibration_per_subject: Option<usize>,
    pub seed: Option<u64>,
}

impl SplitDto {
    pub fn into_params(self) -> SplitParams {
        let defaults = SplitParams::default();
        SplitParams {
            unseen_subjects: self.unseen_subjects,
            val_fraction: self.val_fraction.unwrap_or(defaults.val_fraction),
            seen_test_fraction: self
                .seen_test_fraction
                .unwrap_or(defaults.seen_test_fraction),
            calibration_per_subject: self
                .calibration_per_subject
                .unwrap_or(defaults.calibration_per_subject),
            seed: self.seed.unwrap_or(defaults.seed),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionDto {
    pub n_steps: Option<usize>,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
    pub conditioning: Option<Conditioning>,
    pub hidden: Option<usize>,
    pub kernel: Option<usize>,
    pub refine_strength: Option<f64>,
    pub mode: Option<InferenceMode>,
    pub lambda_aux: Option<f64>,
}

impl DiffusionDto {
    fn into_config(self) -> DiffusionConfig {
        let defaults = DiffusionConfig::default();
        let mut config = DiffusionConfig::linear(
            self.n_steps.unwrap_or(defaults.n_steps),
            self.beta_start.unwrap_or(1e-4),
            self.beta_end.unwrap_or(0.02),
        );
        config.conditioning = self.conditioning.unwrap_or(defaults.conditioning);
        config.hidden = self.hidden.unwrap_or(defaults.hidden);
        config.kernel = self.kernel.unwrap_or(defaults.kernel);
        config.refine_strength = self.refine_strength.unwrap_or(defaults.refine_strength);
        config.mode = self.mode.unwrap_or(defaults.mode);
        config.lambda_aux = self.lambda_aux.unwrap_or(defaults.lambda_aux);
        config
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderDto {
    pub temporal_kernel: Option<usize>,
    pub depth_multiplier: Option<usize>,
    pub block2_features: Option<usize>,
    pub sep_kernel: Option<usize>,
    pub latent_dim: Option<usize>,
    pub proj_dim: Option<usize>,
    pub pool1: Option<usize>,
    pub pool2: Option<usize>,
    pub pool3: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixupDto {
    pub mixup_layer: i8,
    pub flip_prob: Option<f64>,
    pub window_min: Option<usize>,
    pub window_max: Option<usize>,
    pub ratio_mode: Option<RatioMode>,
    pub warmup_epochs: Option<usize>,
}

impl MixupDto {
    fn into_config(self) -> MixupConfig {
        let defaults = MixupConfig::default();
        MixupConfig {
            layer: self.mixup_layer,
            flip_prob: self.flip_prob.unwrap_or(defaults.flip_prob),
            window_min: self.window_min.unwrap_or(defaults.window_min),
            window_max: self.window_max.unwrap_or(defaults.window_max),
            ratio_mode: self.ratio_mode.unwrap_or(defaults.ratio_mode),
            warmup_epochs: self.warmup_epochs.unwrap_or(defaults.warmup_epochs),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossDto {
    pub classification_kind: Option<ClassificationKind>,
    pub alpha: Option<f64>,
    pub beta_max: Option<f64>,
    pub beta_epochs: Option<usize>,
    pub gamma_max: Option<f64>,
    pub gamma_epochs: Option<usize>,
    pub tau: Option<f64>,
}

impl LossDto {
    fn into_weights(self) -> LossWeights {
        let defaults = LossWeights::default();
        LossWeights {
            classification_kind: self
                .classification_kind
                .unwrap_or(defaults.classification_kind),
            alpha: self.alpha.unwrap_or(defaults.alpha),
            beta_max: self.beta_max.unwrap_or(defaults.beta_max),
            beta_epochs: self.beta_epochs.unwrap_or(defaults.beta_epochs),
            gamma_max: self.gamma_max.unwrap_or(defaults.gamma_max),
            gamma_epochs: self.gamma_epochs.unwrap_or(defaults.gamma_epochs),
            tau: self.tau.unwrap_or(defaults.tau),
        }
    }
}

/// One named grid entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub name: String,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub ddpm_learning_rate: Option<f64>,
    pub use_ddpm: Option<bool>,
    pub use_decoder: Option<bool>,
    pub encoder_input: Option<EncoderInput>,
    pub decoder_input: Option<DecoderInputSpec>,
    pub classifier: Option<ClassifierSpec>,
    pub mixup: Option<MixupDto>,
    pub loss: Option<LossDto>,
    pub diffusion: Option<DiffusionDto>,
    pub encoder: Option<EncoderDto>,
    pub stats_fraction: Option<f64>,
    pub couple_recon_target: Option<bool>,
}

impl RunSpec {
    /// Materialize a full training configuration for data of the given shape.
    pub fn to_train_config(
        &self,
        channels: usize,
        timepoints: usize,
        n_classes: usize,
    ) -> Result<TrainConfig> {
        let mut model = ModelConfig::for_shape(channels, timepoints, n_classes);
        if let Some(e) = &self.encoder {
            let enc = &mut model.encoder;
            if let Some(v) = e.temporal_kernel {
                enc.temporal_kernel = v;
            }
            if let Some(v) = e.depth_multiplier {
                enc.depth_multiplier = v;
            }
            if let Some(v) = e.block2_features {
                enc.block2_features = v;
            }
            if let Some(v) = e.sep_kernel {
                enc.sep_kernel = v;
            }
            if let Some(v) = e.latent_dim {
                enc.latent_dim = v;
            }
            if let Some(v) = e.proj_dim {
                enc.proj_dim = v;
            }
            if let Some(v) = e.pool1 {
                enc.pool1 = v;
            }
            if let Some(v) = e.pool2 {
                enc.pool2 = v;
            }
            if let Some(v) = e.pool3 {
                enc.pool3 = v;
            }
        }
        model.use_ddpm = self.use_ddpm.unwrap_or(true);
        model.use_decoder = self.use_decoder.unwrap_or(true);
        if let Some(v) = self.encoder_input {
            model.encoder_input = v;
        }
        if let Some(v) = self.decoder_input {
            model.decoder_input = v;
        }
        if let Some(v) = self.classifier {
            model.classifier = v;
        }
        model.diffusion = self.diffusion.clone().unwrap_or_default().into_config();

        let mut config = TrainConfig::new(model);
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            config.learning_rate = v;
        }
        config.ddpm_learning_rate = self.ddpm_learning_rate;
        config.mixup = self.mixup.clone().map(MixupDto::into_config);
        config.loss = self.loss.clone().unwrap_or_default().into_weights();
        if let Some(v) = self.stats_fraction {
            config.stats_fraction = v;
        }
        if let Some(v) = self.couple_recon_target {
            config.couple_recon_target = v;
        }
        config.validate()?;
        Ok(config)
    }
}

/// The whole experiment document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub split: SplitDto,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub configs: Vec<RunSpec>,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("invalid experiment config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.configs.is_empty() {
            return Err(Error::Config("experiment has no configs".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment has no seeds".into()));
        }
        let mut names = BTreeSet::new();
        for spec in &self.configs {
            if !names.insert(spec.name.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate config name {:?}",
                    spec.name
                )));
            }
        }
        if let DataSource::Archive(path) = &self.data {
            if !path.exists() {
                return Err(Error::Config(format!(
                    "archive path {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 over the canonical JSON of this document.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
