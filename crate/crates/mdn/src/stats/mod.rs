//! Trend-level statistical comparison of configurations from per-seed metric
//! values: effect sizes, cross-seed consistency, win matrices, Bayesian ROPE
//! posteriors, exact Wilcoxon and permutation tests, and table rendering.

mod bayes;
mod effect;
mod evidence;
mod nonparam;
mod report;
mod winmatrix;

pub use bayes::{bayes_rope, BayesPosterior, DEFAULT_ROPE, SUPERIORITY_THRESHOLD};
pub use effect::{cohens_d, relative_improvement, EffectSize, PairedSamples};
pub use evidence::{assess_evidence, seed_agreement, Agreement, EvidenceLevel};
pub use nonparam::{bonferroni, permutation_test, wilcoxon_exact, PermutationTest};
pub use report::render_reports;
pub use winmatrix::{build_win_matrix, win_rate, ConfigSummary, WinAnalysis, WinLossMatrix};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::collections::BTreeMap;

/// Every quantity computed for one unordered configuration pair.
#[derive(Debug, Clone)]
pub struct PairwiseComparison<S: Scalar> {
    pub config_1: String,
    pub config_2: String,
    pub n_seeds: usize,
    pub mean_1: S,
    pub mean_2: S,
    /// `mean_1 - mean_2`.
    pub mean_diff: S,
    pub effect: EffectSize<S>,
    pub agreement: Agreement,
    /// Evidence of `config_1` over `config_2`, or of `config_2` over
    /// `config_1`, whichever direction holds (at most one does).
    pub evidence_forward: Option<EvidenceLevel>,
    pub evidence_reverse: Option<EvidenceLevel>,
    pub bayes: BayesPosterior<S>,
    pub wilcoxon_p: S,
    pub permutation: PermutationTest<S>,
    pub permutation_p_corrected: S,
}

/// A full comparison run: the win analysis plus per-pair records, ready for
/// rendering.
#[derive(Debug, Clone)]
pub struct ComparisonSet<S: Scalar> {
    pub metric: String,
    pub split: String,
    pub win_analysis: WinAnalysis<S>,
    pub pairs: Vec<PairwiseComparison<S>>,
}

/// Knobs for `compare_configs`; defaults mirror the reporting pipeline.
#[derive(Debug, Clone)]
pub struct CompareOptions<S: Scalar> {
    pub rope: S,
    pub n_resamples: usize,
    pub seed: u64,
}

impl<S: Scalar> Default for CompareOptions<S> {
    fn default() -> Self {
        Self {
            rope: S::from_f64_lossy(DEFAULT_ROPE),
            n_resamples: 10_000,
            seed: 0,
        }
    }
}

/// Run the whole comparison pipeline over seed-aligned samples.
///
/// `samples` maps config name to metric values in a shared seed order. The
/// Bonferroni family size is the number of unordered pairs.
pub fn compare_configs<S: Scalar>(
    metric: &str,
    split: &str,
    samples: &BTreeMap<String, Vec<S>>,
    options: &CompareOptions<S>,
) -> Result<ComparisonSet<S>> {
    if samples.len() < 2 {
        return Err(Error::Config(format!(
            "need >= 2 configurations to compare, got {}",
            samples.len()
        )));
    }
    let win_analysis = build_win_matrix(samples)?;
    let configs: Vec<&String> = samples.keys().collect();
    let n_pairs = configs.len() * (configs.len() - 1) / 2;

    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..configs.len() {
        for j in (i + 1)..configs.len() {
            let (c1, c2) = (configs[i].clone(), configs[j].clone());
            let a = samples[&c1].clone();
            let b = samples[&c2].clone();
            let paired = PairedSamples::new(a.clone(), b.clone())?;
            let mean_1 = paired.mean_a();
            let mean_2 = paired.mean_b();
            let effect = cohens_d(&paired)?;
            let agreement = seed_agreement(&paired);
            let evidence_forward = assess_evidence(&paired)?;
            let evidence_reverse = assess_evidence(&PairedSamples::new(b.clone(), a.clone())?)?;
            let bayes = bayes_rope(&paired, options.rope)?;
            let wilcoxon_p = wilcoxon_exact(&paired)?;
            let permutation = permutation_test(&a, &b, options.n_resamples, options.seed)?;
            let permutation_p_corrected = bonferroni(permutation.p_value, n_pairs);
            pairs.push(PairwiseComparison {
                config_1: c1,
                config_2: c2,
                n_seeds: paired.len(),
                mean_1,
                mean_2,
                mean_diff: mean_1 - mean_2,
                effect,
                agreement,
                evidence_forward,
                evidence_reverse,
                bayes,
                wilcoxon_p,
                permutation,
                permutation_p_corrected,
            });
        }
    }

    Ok(ComparisonSet {
        metric: metric.to_string(),
        split: split.to_string(),
        win_analysis,
        pairs,
    })
}
