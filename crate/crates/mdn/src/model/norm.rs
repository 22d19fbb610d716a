//! Subject-wise latent normalization.
//!
//! Latents are standardized per subject: `(z - mu_s) / sigma_s` with the
//! statistics estimated from that subject's own trials. Seen subjects use
//! statistics precomputed from training data; unseen subjects use statistics
//! fitted on-the-fly from a handful of calibration trials.

use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Floor applied to per-dimension standard deviations so zero-variance
/// calibration sets cannot produce infinities.
pub const SIGMA_EPS: f64 = 1e-5;

/// Per-subject mean and clamped standard deviation of latent vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectStats<S: Scalar> {
    entries: BTreeMap<String, (Vec<S>, Vec<S>)>,
    pub dim: usize,
}

/// Which statistics table a lookup should consult.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatsMode {
    /// Subject appeared in training; statistics precomputed from train data.
    Seen,
    /// Subject withheld from training; statistics from calibration trials.
    Unseen,
}

impl<S: Scalar> SubjectStats<S> {
    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn contains(&self, subject: &str) -> bool {
        self.entries.contains_key(subject)
    }

    pub fn get(&self, subject: &str) -> Option<(&[S], &[S])> {
        self.entries
            .get(subject)
            .map(|(m, sd)| (m.as_slice(), sd.as_slice()))
    }
}

/// Fit per-dimension mean and population standard deviation per subject,
/// clamping the deviation below by `eps`.
pub fn fit_subject_stats<S: Scalar>(
    latents_by_subject: &BTreeMap<String, Vec<Array1<S>>>,
    eps: S,
) -> Result<SubjectStats<S>> {
    let dim = latents_by_subject
        .values()
        .flat_map(|v| v.iter())
        .map(|z| z.len())
        .next()
        .ok_or_else(|| Error::Dimension("no latents to fit".into()))?;

    let mut entries = BTreeMap::new();
    for (subject, latents) in latents_by_subject {
        if latents.len() < 2 {
            return Err(Error::Config(format!(
                "subject {subject} has {} latent(s); need at least 2 to fit statistics",
                latents.len()
            )));
        }
        if latents.iter().any(|z| z.len() != dim) {
            return Err(Error::Dimension(format!(
                "subject {subject} latents disagree on dimension {dim}"
            )));
        }
        let n = s::<S>(latents.len() as f64);
        let mut mean = vec![S::zero(); dim];
        for z in latents {
            for (m, &v) in mean.iter_mut().zip(z.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut sd = vec![S::zero(); dim];
        for z in latents {
            for ((acc, &v), &m) in sd.iter_mut().zip(z.iter()).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
        for v in &mut sd {
            *v = (*v / n).sqrt().max(eps);
        }
        entries.insert(subject.clone(), (mean, sd));
    }
    Ok(SubjectStats { entries, dim })
}

/// Standardize a latent with its subject's statistics.
pub fn normalize_latent<S: Scalar>(
    z: &Array1<S>,
    stats: &SubjectStats<S>,
    mode: StatsMode,
    subject: &str,
) -> Result<Array1<S>> {
    let (mean, sd) = stats.get(subject).ok_or_else(|| match mode {
        StatsMode::Seen => Error::Lookup(format!(
            "subject {subject} has no precomputed training statistics"
        )),
        StatsMode::Unseen => Error::Lookup(format!(
            "subject {subject} has no calibration statistics fitted"
        )),
    })?;
    if z.len() != stats.dim {
        return Err(Error::Dimension(format!(
            "latent has length {}, statistics expect {}",
            z.len(),
            stats.dim
        )));
    }
    Ok(Array1::from_iter(
        z.iter()
            .zip(mean.iter().zip(sd))
            .map(|(&v, (&m, &sd))| (v - m) / sd),
    ))
}
