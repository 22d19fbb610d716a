//! Temporal masked mixup and weighted-average mixup.
//!
//! The masked variant splices the denoised and reconstructed signals into
//! localized time windows of the original trial: seed cells flip on with
//! probability `flip_prob`, grow rightward into windows of random length,
//! and each surviving cell flips to the reconstruction source with a
//! per-epoch ratio. Cells left at zero keep the original signal untouched.

use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

/// Ternary selection mask over a trial: 0 keeps the original signal, 1 takes
/// the denoised signal, -1 takes the decoder reconstruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    pub entries: Array2<i8>,
}

impl MaskMatrix {
    pub fn shape(&self) -> (usize, usize) {
        self.entries.dim()
    }
}

/// How mixing weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioMode {
    /// Equal weights; fixed 0.5 flip ratio for the masked variant.
    Fixed,
    /// Dirichlet(0.2) weights; Beta(0.2, 0.2) flip ratio drawn once per epoch.
    Random,
}

/// Mixup placement and mask-generation parameters.
///
/// `layer`: -1 = temporal masked mixup at the input, 0 = weighted average at
/// the input, 1..3 = weighted average after that encoder block, 4 = weighted
/// average after attention pooling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixupConfig {
    #[serde(rename = "mixup_layer")]
    pub layer: i8,
    pub flip_prob: f64,
    pub window_min: usize,
    pub window_max: usize,
    pub ratio_mode: RatioMode,
    pub warmup_epochs: usize,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            layer: -1,
            flip_prob: 0.01,
            window_min: 5,
            window_max: 16,
            ratio_mode: RatioMode::Fixed,
            warmup_epochs: 100,
        }
    }
}

impl MixupConfig {
    pub fn validate(&self, timepoints: usize) -> Result<()> {
        if !(-1..=4).contains(&self.layer) {
            return Err(Error::Config(format!(
                "mixup_layer must be in -1..=4, got {}",
                self.layer
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("flip_prob must lie in [0,1]".into()));
        }
        if self.window_min < 1 || self.window_min > self.window_max || self.window_max > timepoints
        {
            return Err(Error::Config(format!(
                "window bounds must satisfy 1 <= {} <= {} <= {timepoints}",
                self.window_min, self.window_max
            )));
        }
        Ok(())
    }

    /// The reconstruction-flip probability used by every mask this epoch:
    /// fixed 0.5, or one Beta(0.2, 0.2) draw shared across the epoch.
    pub fn epoch_ratio(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.ratio_mode {
            RatioMode::Fixed => 0.5,
            RatioMode::Random => Beta::new(0.2, 0.2).unwrap().sample(rng),
        }
    }
}

/// Build one ternary mask.
///
/// Seeds flip 0 -> 1 i.i.d. with `flip_prob`; each seed expands rightward
/// along time by a window of length uniform in `[window_min, window_max]`
/// (clipped at T, later windows overwrite earlier); each surviving 1 flips to
/// -1 with probability `minus_ratio` (see [`MixupConfig::epoch_ratio`]).
pub fn build_temporal_mask(
    channels: usize,
    timepoints: usize,
    config: &MixupConfig,
    minus_ratio: f64,
    rng: &mut ChaCha8Rng,
) -> MaskMatrix {
    let mut entries = Array2::<i8>::zeros((channels, timepoints));
    let mut seeds = Vec::new();
    for c in 0..channels {
        for t in 0..timepoints {
            if rng.gen_bool(config.flip_prob) {
                seeds.push((c, t));
            }
        }
    }
    for (c, t) in seeds {
        let len = rng.gen_range(config.window_min..=config.window_max);
        for ti in t..(t + len).min(timepoints) {
            entries[[c, ti]] = 1;
        }
    }
    for v in entries.iter_mut() {
        if *v == 1 && rng.gen_bool(minus_ratio) {
            *v = -1;
        }
    }
    MaskMatrix { entries }
}

/// Cellwise selection: 0 -> `original`, 1 -> `denoised`, -1 -> `reconstructed`.
pub fn apply_temporal_mixup<S: Scalar>(
    original: &Array2<S>,
    denoised: &Array2<S>,
    reconstructed: &Array2<S>,
    mask: &MaskMatrix,
) -> Result<Array2<S>> {
    let shape = original.dim();
    if denoised.dim() != shape || reconstructed.dim() != shape || mask.entries.dim() != shape {
        return Err(Error::Dimension(format!(
            "mixup sources and mask must share shape {shape:?}"
        )));
    }
    Ok(Array2::from_shape_fn(shape, |ij| match mask.entries[ij] {
        0 => original[ij],
        1 => denoised[ij],
        _ => reconstructed[ij],
    }))
}

/// Draw mixing weights for 2 or 3 sources: equal, or Dirichlet(0.2, ...).
pub fn sample_mix_weights<S: Scalar>(
    mode: RatioMode,
    n_sources: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<S>> {
    if !(2..=3).contains(&n_sources) {
        return Err(Error::Config(format!(
            "weighted mixup supports 2 or 3 sources, got {n_sources}"
        )));
    }
    Ok(match mode {
        RatioMode::Fixed => vec![S::one() / s::<S>(n_sources as f64); n_sources],
        RatioMode::Random => {
            let dir = Dirichlet::new(&vec![0.2; n_sources]).unwrap();
            dir.sample(rng).into_iter().map(s::<S>).collect()
        }
    })
}

/// Convex combination of equally shaped sources.
pub fn weighted_average_mix<S: Scalar>(sources: &[&Array2<S>], weights: &[S]) -> Result<Array2<S>> {
    if sources.is_empty() || sources.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} sources for {} weights",
            sources.len(),
            weights.len()
        )));
    }
    let shape = sources[0].dim();
    if sources.iter().any(|x| x.dim() != shape) {
        return Err(Error::Dimension("mixup sources must share a shape".into()));
    }
    let mut out = Array2::zeros(shape);
    for (src, &w) in sources.iter().zip(weights) {
        out += &src.mapv(|v| v * w);
    }
    Ok(out)
}

/// The three pathway tensors available at a mixing point, all shaped alike.
pub struct MixSources<'a, S: Scalar> {
    pub original: &'a Array2<S>,
    pub denoised: &'a Array2<S>,
    pub reconstructed: &'a Array2<S>,
}

/// Apply the configured mixup at one integration point.
///
/// Identity (returns the original pathway untouched) while
/// `epoch < warmup_epochs`. Layer -1 composes `build_temporal_mask` with
/// `apply_temporal_mixup`; every other layer takes a weighted average with
/// weights from `sample_mix_weights`.
pub fn mixup_at<S: Scalar>(
    layer: i8,
    epoch: usize,
    config: &MixupConfig,
    sources: MixSources<'_, S>,
    epoch_ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<S>> {
    if !(-1..=4).contains(&layer) {
        return Err(Error::Config(format!("mixup layer {layer} outside -1..=4")));
    }
    if epoch < config.warmup_epochs {
        return Ok(sources.original.clone());
    }
    if layer == -1 {
        let (c, t) = sources.original.dim();
        let mask = build_temporal_mask(c, t, config, epoch_ratio, rng);
        apply_temporal_mixup(
            sources.original,
            sources.denoised,
            sources.reconstructed,
            &mask,
        )
    } else {
        let weights = sample_mix_weights::<S>(config.ratio_mode, 3, rng)?;
        weighted_average_mix(
            &[sources.original, sources.denoised, sources.reconstructed],
            &weights,
        )
    }
}
