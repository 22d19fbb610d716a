//! Synthetic trial generation: class-specific sinusoids, a per-subject
//! constant channel offset, and i.i.d. Gaussian noise. Gives a learnable
//! class signal plus a controllable inter-subject shift at desk scale.

use super::trial::LabeledTrial;
use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Parameters of the synthetic trial generator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub n_classes: usize,
    pub channels: usize,
    pub timepoints: usize,
    pub trials_per_subject_class: usize,
    /// Standard deviation of the per-cell Gaussian noise.
    pub noise_sd: f64,
    /// Standard deviation of the per-subject constant channel offset.
    pub subject_shift_sd: f64,
    /// One oscillation frequency per class, in cycles per window.
    pub base_freqs: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_subjects: 6,
            n_classes: 4,
            channels: 8,
            timepoints: 128,
            trials_per_subject_class: 20,
            noise_sd: 0.3,
            subject_shift_sd: 0.5,
            base_freqs: vec![2.0, 4.0, 6.0, 8.0],
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_subjects", self.n_subjects),
            ("n_classes", self.n_classes),
            ("channels", self.channels),
            ("timepoints", self.timepoints),
            ("trials_per_subject_class", self.trials_per_subject_class),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1, got {v}")));
            }
        }
        if self.noise_sd < 0.0 {
            return Err(Error::Config("noise_sd must be >= 0".into()));
        }
        if self.subject_shift_sd < 0.0 {
            return Err(Error::Config("subject_shift_sd must be >= 0".into()));
        }
        if self.base_freqs.len() != self.n_classes {
            return Err(Error::Config(format!(
                "base_freqs has {} entries for {} classes",
                self.base_freqs.len(),
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn subject_id(&self, index: usize) -> String {
        format!("s{:02}", index + 1)
    }
}

/// Generate `n_subjects * n_classes * trials_per_subject_class` trials,
/// deterministic given the generator seed.
///
/// Trial `(subject, class, k)` is
/// `sin(2*pi*f_class*t/T + phase_c) + offset(subject, c) + noise`, where
/// `phase_c = 2*pi*c/C` fixes a per-channel phase, the offset is drawn once
/// per subject and channel, and noise is i.i.d. Gaussian per cell.
pub fn generate_synthetic<S: Scalar>(spec: &SyntheticSpec) -> Result<Vec<LabeledTrial<S>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, t) = (spec.channels, spec.timepoints);

    let mut trials =
        Vec::with_capacity(spec.n_subjects * spec.n_classes * spec.trials_per_subject_class);
    for subject in 0..spec.n_subjects {
        let offsets: Vec<f64> = (0..c)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * spec.subject_shift_sd
            })
            .collect();
        for class in 0..spec.n_classes {
            let freq = spec.base_freqs[class];
            for _ in 0..spec.trials_per_subject_class {
                let mut signal = Array2::<S>::zeros((c, t));
                for ch in 0..c {
                    let phase = TAU * ch as f64 / c as f64;
                    for ti in 0..t {
                        let clean = (TAU * freq * ti as f64 / t as f64 + phase).sin();
                        let noise: f64 = rng.sample(StandardNormal);
                        signal[[ch, ti]] = s::<S>(clean + offsets[ch] + noise * spec.noise_sd);
                    }
                }
                trials.push(LabeledTrial::new(
                    signal,
                    class,
                    spec.n_classes,
                    spec.subject_id(subject),
                    None,
                )?);
            }
        }
    }
    Ok(trials)
}
