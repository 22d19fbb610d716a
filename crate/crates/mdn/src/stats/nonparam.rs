//! Exact nonparametric tests sized for few-seed comparisons, plus Bonferroni.

use super::effect::{mean, PairedSamples};
use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sign assignments become infeasible beyond this many nonzero differences.
const MAX_EXACT_WILCOXON: usize = 20;
/// Partition count cap for exact permutation enumeration.
const MAX_EXACT_PARTITIONS: u128 = 100_000;

/// Average ranks of `|values|`, ties sharing the mean of their rank range.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].abs().partial_cmp(&values[j].abs()).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]].abs() == values[order[i]].abs() {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided exact Wilcoxon signed-rank p-value by enumerating all `2^m` sign
/// assignments over the nonzero differences (zeros dropped before ranking).
///
/// All-zero differences give `p = 1`.
pub fn wilcoxon_exact<S: Scalar>(samples: &PairedSamples<S>) -> Result<S> {
    let diffs: Vec<f64> = samples
        .diffs()
        .iter()
        .map(|d| d.to_f64_lossy())
        .filter(|d| *d != 0.0)
        .collect();
    let m = diffs.len();
    if m == 0 {
        return Ok(S::one());
    }
    if m > MAX_EXACT_WILCOXON {
        return Err(Error::Config(format!(
            "exact Wilcoxon enumeration capped at {MAX_EXACT_WILCOXON} nonzero differences, got {m}"
        )));
    }
    let ranks = average_ranks(&diffs);
    let observed: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    let total = 1u64 << m;
    let eps = 1e-9;
    let mut le = 0u64;
    let mut ge = 0u64;
    for assignment in 0..total {
        let w: f64 = (0..m)
            .filter(|bit| assignment & (1 << bit) != 0)
            .map(|bit| ranks[bit])
            .sum();
        if w <= observed + eps {
            le += 1;
        }
        if w >= observed - eps {
            ge += 1;
        }
    }
    let tail = (le.min(ge) as f64) / total as f64;
    Ok(s((2.0 * tail).min(1.0)))
}

/// Result of a two-sample pooled permutation test.
#[derive(Debug, Clone, Copy)]
pub struct PermutationTest<S: Scalar> {
    pub p_value: S,
    /// Reported statistic: `mean(a) - mean(b)` (signed).
    pub statistic: S,
    /// Whether the p-value came from full enumeration.
    pub exact: bool,
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Two-sample permutation test of `|mean(a) - mean(b)|` over pooled
/// reassignments. All `C(n1+n2, n1)` partitions are enumerated when that count
/// is at most 10^5; otherwise `n_resamples` Monte Carlo shuffles driven by
/// `seed` are used.
pub fn permutation_test<S: Scalar>(
    a: &[S],
    b: &[S],
    n_resamples: usize,
    seed: u64,
) -> Result<PermutationTest<S>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Dimension(
            "permutation test needs nonempty groups".into(),
        ));
    }
    let n1 = a.len();
    let n2 = b.len();
    let pooled: Vec<f64> = a.iter().chain(b.iter()).map(|v| v.to_f64_lossy()).collect();
    let observed = mean(a).to_f64_lossy() - mean(b).to_f64_lossy();
    let abs_obs = observed.abs();
    let eps = 1e-12;
    let total_sum: f64 = pooled.iter().sum();
    let nf1 = n1 as f64;
    let nf2 = n2 as f64;
    let diff_of = |sum_a: f64| sum_a / nf1 - (total_sum - sum_a) / nf2;

    if binomial(n1 + n2, n1) <= MAX_EXACT_PARTITIONS {
        let mut exceed = 0u64;
        let mut count = 0u64;
        for subset in (0..n1 + n2).combinations(n1) {
            let sum_a: f64 = subset.iter().map(|&i| pooled[i]).sum();
            if diff_of(sum_a).abs() >= abs_obs - eps {
                exceed += 1;
            }
            count += 1;
        }
        return Ok(PermutationTest {
            p_value: s(exceed as f64 / count as f64),
            statistic: s(observed),
            exact: true,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n1 + n2).collect();
    let mut exceed = 0u64;
    for _ in 0..n_resamples {
        indices.shuffle(&mut rng);
        let sum_a: f64 = indices[..n1].iter().map(|&i| pooled[i]).sum();
        if diff_of(sum_a).abs() >= abs_obs - eps {
            exceed += 1;
        }
    }
    Ok(PermutationTest {
        p_value: s((exceed as f64 + 1.0) / (n_resamples as f64 + 1.0)),
        statistic: s(observed),
        exact: false,
    })
}

/// Bonferroni correction: `min(1, p * m)`.
pub fn bonferroni<S: Scalar>(p: S, m: usize) -> S {
    debug_assert!(m >= 1);
    debug_assert!(p >= S::zero() && p <= S::one());
    (p * s(m as f64)).min(S::one())
}
