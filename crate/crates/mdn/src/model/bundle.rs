//! The assembled model: encoder, projection head, optional DDPM and decoder,
//! classifier, subject statistics, and checkpoint serialization.

use super::classifier::{Classifier, ClassifierInput, ClassifierSpec};
use super::ddpm::{Conditioning, DdpmItem, DiffusionConfig, NoisePredictor};
use super::decoder::{Decoder, DecoderInputSpec, DecoderInputs};
use super::encoder::{Encoder, EncoderConfig, MultiScaleFeatures};
use super::norm::{fit_subject_stats, normalize_latent, StatsMode, SubjectStats};
use super::projection::ProjectionHead;
use crate::data::LabeledTrial;
use crate::error::{Error, Result};
use crate::nn::{ParamGroup, ParamStore};
use crate::scalar::{s, Scalar};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

/// What the encoder consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderInput {
    X,
    XHat,
}

/// Full architectural configuration, including the ablation switches.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub timepoints: usize,
    pub n_classes: usize,
    pub encoder: EncoderConfig,
    pub use_ddpm: bool,
    pub use_decoder: bool,
    pub encoder_input: EncoderInput,
    pub diffusion: DiffusionConfig,
    pub decoder_input: DecoderInputSpec,
    pub classifier: ClassifierSpec,
    /// Clamp floor for subject-statistic standard deviations.
    pub sigma_eps: f64,
}

impl ModelConfig {
    pub fn for_shape(channels: usize, timepoints: usize, n_classes: usize) -> Self {
        Self {
            channels,
            timepoints,
            n_classes,
            encoder: EncoderConfig::for_shape(channels, timepoints),
            use_ddpm: true,
            use_decoder: true,
            encoder_input: EncoderInput::X,
            diffusion: DiffusionConfig::default(),
            decoder_input: DecoderInputSpec::z_only(),
            classifier: ClassifierSpec::default(),
            sigma_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.encoder.channels != self.channels || self.encoder.timepoints != self.timepoints {
            return Err(Error::Config(
                "encoder config shape disagrees with model shape".into(),
            ));
        }
        self.encoder.validate()?;
        self.classifier.validate()?;
        if self.use_ddpm {
            self.diffusion.validate()?;
        }
        if !self.use_ddpm {
            if self.encoder_input == EncoderInput::XHat {
                return Err(Error::Config(
                    "encoder_input = x_hat requires use_ddpm = true".into(),
                ));
            }
            if self.classifier.input == ClassifierInput::XHat {
                return Err(Error::Config(
                    "classifier input x_hat requires use_ddpm = true".into(),
                ));
            }
            if self.use_decoder && self.decoder_input.use_x_hat {
                return Err(Error::Config(
                    "decoder input x_hat requires use_ddpm = true".into(),
                ));
            }
        }
        if self.use_decoder {
            self.decoder_input.validate()?;
        } else if self.classifier.input == ClassifierInput::DecoderOut {
            return Err(Error::Config(
                "classifier input decoder_out requires use_decoder = true".into(),
            ));
        }
        if self.sigma_eps <= 0.0 {
            return Err(Error::Config("sigma_eps must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Whether any inference-path consumer needs the denoised signal.
    pub fn needs_denoised(&self) -> bool {
        self.use_ddpm
            && (self.encoder_input == EncoderInput::XHat
                || self.classifier.input == ClassifierInput::XHat
                || (self.use_decoder && self.decoder_input.use_x_hat))
    }
}

/// Everything computed for one trial on the inference path.
pub struct TrialForward<S: Scalar> {
    pub denoised: Option<Array2<S>>,
    pub features: MultiScaleFeatures<S>,
    pub z: Array1<S>,
    pub z_norm: Option<Array1<S>>,
    pub z_proj: Option<Array1<S>>,
    pub decoded: Option<Array2<S>>,
    pub logits: Array1<S>,
}

/// The assembled model.
pub struct ModelBundle<S: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    pub encoder: Encoder,
    pub projection: ProjectionHead,
    pub decoder: Option<Decoder>,
    pub predictor: Option<NoisePredictor>,
    pub classifier: Classifier,
    /// Per-subject statistics from training data; fitted by the trainer.
    pub train_stats: Option<SubjectStats<S>>,
    pub init_seed: u64,
}

impl<S: Scalar> ModelBundle<S> {
    pub fn new(config: ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let encoder = Encoder::new(config.encoder.clone(), &mut store, &mut rng)?;
        let projection = ProjectionHead::new(
            config.encoder.latent_dim,
            config.encoder.proj_dim,
            &mut store,
            &mut rng,
        );
        let decoder = if config.use_decoder {
            Some(Decoder::new(&config.encoder, &mut store, &mut rng))
        } else {
            None
        };
        let predictor = if config.use_ddpm {
            Some(NoisePredictor::new(
                config.diffusion.clone(),
                config.channels,
                config.n_classes,
                &mut store,
                &mut rng,
            )?)
        } else {
            None
        };
        let classifier = Classifier::new(
            config.classifier,
            config.channels,
            config.timepoints,
            config.encoder.latent_dim,
            config.n_classes,
            &mut store,
            &mut rng,
        )?;
        Ok(Self {
            config,
            store,
            encoder,
            projection,
            decoder,
            predictor,
            classifier,
            train_stats: None,
            init_seed,
        })
    }

    /// Denoise one signal; label conditioning is used during training only.
    pub fn denoise(
        &self,
        x: &Array2<S>,
        label: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<S>> {
        let predictor = self
            .predictor
            .as_ref()
            .ok_or_else(|| Error::Config("model was built without a DDPM".into()))?;
        predictor.denoise(&self.store, x, label, rng)
    }

    /// One DDPM optimization step over a batch; returns the loss. Trains
    /// only DDPM parameters and is never part of the main objective.
    pub fn ddpm_step(
        &mut self,
        batch: &[(&Array2<S>, usize)],
        lr: S,
        rng: &mut ChaCha8Rng,
    ) -> Result<S> {
        let predictor = self
            .predictor
            .as_ref()
            .ok_or_else(|| Error::Config("model was built without a DDPM".into()))?;
        if batch.is_empty() {
            return Err(Error::Dimension("ddpm batch must be nonempty".into()));
        }
        let n_steps = predictor.schedule.n_steps();
        let items: Vec<DdpmItem<S>> = batch
            .iter()
            .map(|(x, label)| {
                let t = rng.gen_range(1..=n_steps);
                let noise = super::ddpm::sample_normal(rng, x.dim());
                DdpmItem {
                    signal: (*x).clone(),
                    label: match predictor.config.conditioning {
                        Conditioning::Class => Some(*label),
                        Conditioning::None => None,
                    },
                    t,
                    noise,
                }
            })
            .collect();
        let mut g = crate::nn::Graph::new();
        let loss = predictor.loss_graph(&mut g, &self.store, &items)?;
        let loss_value = g.scalar_value(loss);
        let grads = g.backward(loss);
        self.store
            .adam_step(&grads.by_param(), lr, |group| group == ParamGroup::Ddpm);
        Ok(loss_value)
    }

    /// Encoder input for one trial: the raw signal or its denoised version.
    fn encoder_signal(&self, x: &Array2<S>, denoised: Option<&Array2<S>>) -> Result<Array2<S>> {
        match self.config.encoder_input {
            EncoderInput::X => Ok(x.clone()),
            EncoderInput::XHat => denoised.cloned().ok_or_else(|| {
                Error::Config("encoder_input = x_hat but no denoised signal".into())
            }),
        }
    }

    /// Full inference pass for one trial. `stats` selects the normalization
    /// table (training stats for seen subjects, calibration stats for unseen
    /// ones); without stats the raw latent feeds the latent classifier.
    pub fn forward_trial(
        &self,
        x: &Array2<S>,
        subject: &str,
        stats: Option<(&SubjectStats<S>, StatsMode)>,
        denoise_rng: &mut ChaCha8Rng,
    ) -> Result<TrialForward<S>> {
        let denoised = if self.config.needs_denoised() {
            Some(self.denoise(x, None, denoise_rng)?)
        } else {
            None
        };
        let enc_in = self.encoder_signal(x, denoised.as_ref())?;
        let features = self.encoder.encode(&self.store, &enc_in)?;
        let (z, _) = self.encoder.attention_pool(&self.store, &features.dn3)?;
        let z_norm = match stats {
            Some((table, mode)) => Some(normalize_latent(&z, table, mode, subject)?),
            None => None,
        };
        let z_proj = Some(
            self.projection
                .project(&self.store, z_norm.as_ref().unwrap_or(&z))?,
        );
        let decoded = match &self.decoder {
            Some(decoder) => Some(decoder.decode(
                &self.store,
                &self.config.decoder_input,
                DecoderInputs {
                    z: Some(&z),
                    x: Some(x),
                    x_hat: denoised.as_ref(),
                    skips: Some(&features),
                },
            )?),
            None => None,
        };
        let logits = match self.classifier.spec.input {
            ClassifierInput::X => self.classifier.classify_signal(&self.store, x)?,
            ClassifierInput::XHat => {
                let xh = denoised.as_ref().ok_or_else(|| {
                    Error::Config("classifier needs x_hat but DDPM is off".into())
                })?;
                self.classifier.classify_signal(&self.store, xh)?
            }
            ClassifierInput::DecoderOut => {
                let d = decoded.as_ref().ok_or_else(|| {
                    Error::Config("classifier needs decoder_out but decoder is off".into())
                })?;
                self.classifier.classify_signal(&self.store, d)?
            }
            ClassifierInput::Z => self
                .classifier
                .classify_latent(&self.store, z_norm.as_ref().unwrap_or(&z))?,
        };
        Ok(TrialForward {
            denoised,
            features,
            z,
            z_norm,
            z_proj,
            decoded,
            logits,
        })
    }

    /// Latent (encode + attention pool) for one trial, on the configured
    /// encoder input. Denoising randomness is an isolated stream per trial.
    pub fn latent_for_trial(
        &self,
        trial: &LabeledTrial<S>,
        denoise_seed: u64,
        stream: u64,
    ) -> Result<Array1<S>> {
        let mut rng = ChaCha8Rng::seed_from_u64(denoise_seed);
        rng.set_stream(stream);
        let denoised = if self.config.use_ddpm && self.config.encoder_input == EncoderInput::XHat {
            Some(self.denoise(&trial.signal, None, &mut rng)?)
        } else {
            None
        };
        let enc_in = self.encoder_signal(&trial.signal, denoised.as_ref())?;
        self.encoder.encode_pooled(&self.store, &enc_in)
    }

    /// Fit per-subject statistics from latents of the given trials.
    pub fn fit_stats_from_trials(
        &self,
        trials: &[LabeledTrial<S>],
        denoise_seed: u64,
    ) -> Result<SubjectStats<S>> {
        let mut groups: BTreeMap<String, Vec<Array1<S>>> = BTreeMap::new();
        for (i, trial) in trials.iter().enumerate() {
            let z = self.latent_for_trial(trial, denoise_seed, i as u64)?;
            groups.entry(trial.subject_id.clone()).or_default().push(z);
        }
        fit_subject_stats(&groups, s::<S>(self.config.sigma_eps))
    }

    // -- checkpoint io -----------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            scalar_bits: std::mem::size_of::<S>() * 8,
            config: self.config.clone(),
            config_hash: self.config.hash(),
            init_seed: self.init_seed,
            tensors: self
                .store
                .snapshot()
                .iter()
                .map(|(name, value)| TensorMeta {
                    name: name.clone(),
                    rows: value.nrows(),
                    cols: value.ncols(),
                })
                .collect(),
            subject_stats: self.train_stats.as_ref().map(stats_to_wire),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(CHECKPOINT_MAGIC)?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        for (_, value) in self.store.snapshot() {
            for v in value.iter() {
                file.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path).map_err(|e| {
            Error::Format(format!("cannot open checkpoint {}: {e}", path.display()))
        })?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)
            .map_err(|_| Error::Format("checkpoint too short for magic".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)
            .map_err(|_| Error::Format("checkpoint truncated before header".into()))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)
            .map_err(|_| Error::Format("checkpoint truncated inside header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "unknown checkpoint format {}",
                header.format
            )));
        }
        if header.config_hash != header.config.hash() {
            return Err(Error::Format("checkpoint config hash mismatch".into()));
        }

        let mut bundle = ModelBundle::new(header.config.clone(), header.init_seed)?;
        let expected: Vec<(String, usize, usize)> = bundle
            .store
            .snapshot()
            .iter()
            .map(|(n, v)| (n.clone(), v.nrows(), v.ncols()))
            .collect();
        let found: Vec<(String, usize, usize)> = header
            .tensors
            .iter()
            .map(|t| (t.name.clone(), t.rows, t.cols))
            .collect();
        if expected != found {
            return Err(Error::Format(
                "checkpoint tensor table does not match the configured architecture".into(),
            ));
        }
        let mut payload = Vec::new();
        file.read_to_end(&mut payload)?;
        let total: usize = header.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
        if payload.len() != total {
            return Err(Error::Format(format!(
                "checkpoint payload is {} bytes, tensor table requires {total}",
                payload.len()
            )));
        }
        let mut offset = 0usize;
        for (idx, meta) in header.tensors.iter().enumerate() {
            let mut value = Array2::<S>::zeros((meta.rows, meta.cols));
            for v in value.iter_mut() {
                let bits: [u8; 8] = payload[offset..offset + 8].try_into().unwrap();
                *v = s::<S>(f64::from_le_bytes(bits));
                offset += 8;
            }
            let id = bundle.store.ids().nth(idx).unwrap();
            bundle.store.set_value(id, value);
        }
        bundle.train_stats = header.subject_stats.as_ref().map(stats_from_wire);
        Ok(bundle)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MDNCKPT1";
const CHECKPOINT_FORMAT: &str = "mdn-checkpoint";

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct WireStats {
    dim: usize,
    subjects: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    scalar_bits: usize,
    config: ModelConfig,
    config_hash: String,
    init_seed: u64,
    tensors: Vec<TensorMeta>,
    subject_stats: Option<WireStats>,
}

fn stats_to_wire<S: Scalar>(stats: &SubjectStats<S>) -> WireStats {
    let mut subjects = BTreeMap::new();
    for subject in stats.subjects() {
        let (mean, sd) = stats.get(subject).unwrap();
        subjects.insert(
            subject.to_string(),
            (
                mean.iter().map(|v| v.to_f64_lossy()).collect(),
                sd.iter().map(|v| v.to_f64_lossy()).collect(),
            ),
        );
    }
    WireStats {
        dim: stats.dim,
        subjects,
    }
}

fn stats_from_wire<S: Scalar>(wire: &WireStats) -> SubjectStats<S> {
    let groups: BTreeMap<String, Vec<Array1<S>>> = wire
        .subjects
        .iter()
        .map(|(subject, (mean, sd))| {
            // Rebuild from two synthetic latents that reproduce (mean, sd):
            // mean ± sd has exactly that mean and population sd.
            let a = Array1::from_iter(mean.iter().zip(sd).map(|(&m, &d)| s::<S>(m + d)));
            let b = Array1::from_iter(mean.iter().zip(sd).map(|(&m, &d)| s::<S>(m - d)));
            (subject.clone(), vec![a, b])
        })
        .collect();
    fit_subject_stats(&groups, s::<S>(0.0)).expect("wire stats are well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use tempfile::TempDir;

    fn small_model_config() -> ModelConfig {
        let mut config = ModelConfig::for_shape(3, 32, 4);
        config.encoder.temporal_kernel = 7;
        config.encoder.block2_features = 4;
        config.encoder.latent_dim = 6;
        config.encoder.proj_dim = 4;
        config.encoder.pool1 = 2;
        config.encoder.pool2 = 2;
        config.encoder.pool3 = 2;
        config.diffusion = DiffusionConfig {
            hidden: 4,
            kernel: 3,
            ..DiffusionConfig::linear(6, 1e-4, 0.02)
        };
        config
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let mut c = small_model_config();
        c.use_ddpm = false;
        c.encoder_input = EncoderInput::XHat;
        assert!(c.validate().is_err());

        let mut c = small_model_config();
        c.use_ddpm = false;
        c.decoder_input.use_x_hat = true;
        assert!(c.validate().is_err());

        let mut c = small_model_config();
        c.use_decoder = false;
        c.classifier.input = ClassifierInput::DecoderOut;
        assert!(c.validate().is_err());
    }

    #[test]
    fn forward_trial_produces_consistent_shapes() {
        // Route x_hat into the decoder so the denoised path is exercised.
        let mut config = small_model_config();
        config.decoder_input.use_x_hat = true;
        let bundle = ModelBundle::<f64>::new(config, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((3, 32), |_| rng.gen_range(-1.0..1.0));
        let mut drng = ChaCha8Rng::seed_from_u64(2);
        let fwd = bundle.forward_trial(&x, "s01", None, &mut drng).unwrap();
        assert_eq!(fwd.z.len(), 6);
        assert_eq!(fwd.logits.len(), 4);
        assert_eq!(fwd.denoised.as_ref().unwrap().dim(), (3, 32));
        assert_eq!(fwd.decoded.as_ref().unwrap().dim(), (3, 32));
        let norm: f64 = fwd
            .z_proj
            .as_ref()
            .unwrap()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        approx::assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut bundle = ModelBundle::<f64>::new(small_model_config(), 11).unwrap();
        // Give it nontrivial stats to carry.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut groups = BTreeMap::new();
        groups.insert(
            "s01".to_string(),
            (0..4)
                .map(|_| Array1::from_shape_fn(6, |_| rng.gen_range(-1.0..1.0)))
                .collect::<Vec<_>>(),
        );
        bundle.train_stats = Some(fit_subject_stats(&groups, 1e-5).unwrap());

        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt");
        bundle.save(&path).unwrap();
        let loaded = ModelBundle::<f64>::load(&path).unwrap();

        assert_eq!(bundle.config, loaded.config);
        for (a, b) in bundle.store.snapshot().iter().zip(loaded.store.snapshot()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
        }
        let orig = bundle.train_stats.as_ref().unwrap();
        let restored = loaded.train_stats.as_ref().unwrap();
        let (m1, s1) = orig.get("s01").unwrap();
        let (m2, s2) = restored.get("s01").unwrap();
        for (a, b) in m1.iter().zip(m2) {
            approx::assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in s1.iter().zip(s2) {
            approx::assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn corrupt_checkpoints_are_format_errors() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(
            ModelBundle::<f64>::load(&path),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn ddpm_step_trains_only_ddpm_parameters() {
        let mut bundle = ModelBundle::<f64>::new(small_model_config(), 13).unwrap();
        let before: Vec<(String, Array2<f64>)> = bundle.store.snapshot();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((3, 32), |_| rng.gen_range(-1.0..1.0));
        let loss = bundle.ddpm_step(&[(&x, 1)], 1e-3, &mut rng).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        for (id, (name, old)) in bundle.store.ids().zip(before.iter()) {
            let changed = bundle.store.value(id) != old;
            if name.starts_with("ddpm.") {
                assert!(changed, "{name} should have been updated");
            } else {
                assert!(!changed, "{name} must not move under the DDPM loss");
            }
        }
    }
}
