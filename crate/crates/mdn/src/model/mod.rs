//! Model components: encoder, normalization, projection, diffusion, decoder,
//! classifier, and the assembled bundle with checkpoint I/O.

mod bundle;
mod classifier;
mod ddpm;
mod decoder;
mod encoder;
mod norm;
mod projection;

pub use bundle::{EncoderInput, ModelBundle, ModelConfig, TrialForward};
pub use classifier::{Classifier, ClassifierHead, ClassifierInput, ClassifierSpec};
pub use ddpm::{
    Conditioning, DdpmItem, DenoiseNoises, DiffusionConfig, DiffusionSchedule, InferenceMode,
    NoisePredictor,
};
pub use decoder::{Decoder, DecoderInputSpec, DecoderInputVars, DecoderInputs};
pub use encoder::{Encoder, EncoderConfig, MultiScaleFeatures};
pub use norm::{fit_subject_stats, normalize_latent, StatsMode, SubjectStats, SIGMA_EPS};
pub use projection::ProjectionHead;
