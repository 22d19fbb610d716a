//! Multi-objective diffusion decoder for EEG-style trial data.
//!
//! The pipeline couples a conditional DDPM, an attention-pooled convolutional
//! encoder with subject-wise latent normalization and a contrastive
//! projection head, a lightweight signal decoder, and a classifier, all
//! trained jointly against a scheduled three-part objective. A statistics
//! toolkit compares configurations across seeds with effect sizes, win
//! matrices, Bayesian ROPE posteriors, and exact nonparametric tests.
//!
//! All numeric code is generic over the scalar type ([`Scalar`]); concrete
//! aliases for the common instantiations live at the crate root.

pub mod data;
pub mod error;
pub mod exp;
pub mod mixup;
pub mod model;
pub mod nn;
pub mod objective;
pub mod scalar;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Trials as stored on disk (archives are little-endian f32).
pub type Trial32 = data::LabeledTrial<f32>;
/// Trials widened for double-precision training and gradient checks.
pub type Trial64 = data::LabeledTrial<f64>;
pub type Split32 = data::DatasetSplit<f32>;
pub type Split64 = data::DatasetSplit<f64>;
pub type Model32 = model::ModelBundle<f32>;
pub type Model64 = model::ModelBundle<f64>;
pub type Results32 = train::SeedResultTable<f32>;
pub type Results64 = train::SeedResultTable<f64>;
