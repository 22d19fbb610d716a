//! Cross-seed agreement and the hierarchical evidence levels built on top of
//! effect size, relative improvement, and directional consistency.

use super::effect::{cohens_d, relative_improvement, PairedSamples};
use crate::error::Result;
use crate::scalar::{s, Scalar};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Directional consistency of per-seed differences.
///
/// Zero differences count against agreement: a tie is not a consistent
/// direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agreement {
    /// Every per-seed difference has the same strict sign.
    Complete { positive: bool },
    /// At least `ceil(2n/3)` differences share one strict sign.
    Majority { positive: bool },
    /// Neither of the above.
    None,
}

/// Level of evidence that one configuration beats another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvidenceLevel {
    Minimal,
    Weak,
    Moderate,
    Strong,
}

impl fmt::Display for EvidenceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            EvidenceLevel::Strong => "Strong",
            EvidenceLevel::Moderate => "Moderate",
            EvidenceLevel::Weak => "Weak",
            EvidenceLevel::Minimal => "Minimal",
        };
        f.write_str(name)
    }
}

impl EvidenceLevel {
    fn downgrade(self) -> Option<EvidenceLevel> {
        match self {
            EvidenceLevel::Strong => Some(EvidenceLevel::Moderate),
            EvidenceLevel::Moderate => Some(EvidenceLevel::Weak),
            EvidenceLevel::Weak => Some(EvidenceLevel::Minimal),
            EvidenceLevel::Minimal => None,
        }
    }
}

/// Sign pattern of per-seed differences `a_i - b_i`.
pub fn seed_agreement<S: Scalar>(samples: &PairedSamples<S>) -> Agreement {
    let diffs = samples.diffs();
    let n = diffs.len();
    let pos = diffs.iter().filter(|&&d| d > S::zero()).count();
    let neg = diffs.iter().filter(|&&d| d < S::zero()).count();
    let majority_threshold = (2 * n).div_ceil(3);
    if pos == n {
        Agreement::Complete { positive: true }
    } else if neg == n {
        Agreement::Complete { positive: false }
    } else if pos >= majority_threshold {
        Agreement::Majority { positive: true }
    } else if neg >= majority_threshold {
        Agreement::Majority { positive: false }
    } else {
        Agreement::None
    }
}

const LARGE_EFFECT: f64 = 0.5;
const MEDIUM_EFFECT: f64 = 0.3;
const SMALL_EFFECT: f64 = 0.2;
const MEANINGFUL_RELATIVE: f64 = 0.02;

/// Evidence that configuration `a` is superior to configuration `b`.
///
/// With complete agreement in `a`'s favor:
/// Strong iff `|d| >= 0.5` and relative improvement `>= 2%`;
/// Moderate iff `|d| >= 0.5` or relative improvement `>= 2%`;
/// Weak iff `|d| >= 0.3`; Minimal iff `|d| >= 0.2`; tested in that order.
/// Majority agreement downgrades the resulting level by one.
/// No agreement (or agreement in `b`'s favor) yields no evidence.
pub fn assess_evidence<S: Scalar>(samples: &PairedSamples<S>) -> Result<Option<EvidenceLevel>> {
    let agreement = seed_agreement(samples);
    let (complete, positive) = match agreement {
        Agreement::Complete { positive } => (true, positive),
        Agreement::Majority { positive } => (false, positive),
        Agreement::None => return Ok(None),
    };
    if !positive {
        return Ok(None);
    }

    let effect = cohens_d(samples)?;
    let abs_d = effect.d.abs();
    let mean_a = samples.mean_a();
    let mean_b = samples.mean_b();
    // A zero baseline cannot be improved upon "relatively"; treat any gain as
    // meaningful so a perfect direction still registers.
    let rel = match relative_improvement(mean_a, mean_b) {
        Ok(r) => r,
        Err(_) => {
            if mean_a > S::zero() {
                S::infinity()
            } else {
                S::zero()
            }
        }
    };

    let large = abs_d >= s(LARGE_EFFECT);
    let meaningful = rel >= s(MEANINGFUL_RELATIVE);
    let base = if large && meaningful {
        Some(EvidenceLevel::Strong)
    } else if large || meaningful {
        Some(EvidenceLevel::Moderate)
    } else if abs_d >= s(MEDIUM_EFFECT) {
        Some(EvidenceLevel::Weak)
    } else if abs_d >= s(SMALL_EFFECT) {
        Some(EvidenceLevel::Minimal)
    } else {
        None
    };

    Ok(if complete {
        base
    } else {
        base.and_then(EvidenceLevel::downgrade)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paired(a: &[f64], b: &[f64]) -> PairedSamples<f64> {
        PairedSamples::new(a.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn agreement_rules() {
        assert_eq!(
            seed_agreement(&paired(&[0.6, 0.7, 0.8], &[0.5, 0.5, 0.5])),
            Agreement::Complete { positive: true }
        );
        assert_eq!(
            seed_agreement(&paired(&[0.6, 0.7, 0.4], &[0.5, 0.5, 0.5])),
            Agreement::Majority { positive: true }
        );
        // (+, -, 0): zeros count against, no two strict signs agree
        assert_eq!(
            seed_agreement(&paired(&[0.6, 0.4, 0.5], &[0.5, 0.5, 0.5])),
            Agreement::None
        );
        assert_eq!(
            seed_agreement(&paired(&[0.4, 0.3, 0.2], &[0.5, 0.5, 0.5])),
            Agreement::Complete { positive: false }
        );
    }

    #[test]
    fn strong_requires_both_criteria_under_complete_agreement() {
        // d = 3.0, rel = 50% -> Strong
        let p = paired(&[0.8, 0.9, 1.0], &[0.5, 0.6, 0.7]);
        assert_eq!(assess_evidence(&p).unwrap(), Some(EvidenceLevel::Strong));
    }

    #[test]
    fn majority_downgrades_one_level() {
        // Same magnitudes but one seed flipped: majority positive, large d & rel
        let p = paired(&[0.8, 0.9, 0.55], &[0.5, 0.6, 0.7]);
        match seed_agreement(&p) {
            Agreement::Majority { positive: true } => {}
            other => panic!("expected positive majority, got {other:?}"),
        }
        let level = assess_evidence(&p).unwrap();
        assert_eq!(level, Some(EvidenceLevel::Moderate));
    }

    #[test]
    fn small_effects_map_to_lower_rungs() {
        // Complete agreement, tiny relative gain, |d| between 0.2 and 0.3 ->
        // Minimal. Values tuned by hand: diffs all +0.001 on a noisy base.
        let a = [0.700, 0.801, 0.902];
        let b = [0.699, 0.800, 0.901];
        let p = paired(&a, &b);
        let e = cohens_d(&p).unwrap();
        assert!(e.d.abs() < 0.3, "d was {}", e.d);
        // rel ≈ 0.125% < 2%
        assert_eq!(assess_evidence(&p).unwrap(), None);
    }

    #[test]
    fn antisymmetry() {
        let cases: [(&[f64], &[f64]); 3] = [
            (&[0.8, 0.9, 1.0], &[0.5, 0.6, 0.7]),
            (&[0.5, 0.52, 0.51], &[0.5, 0.5, 0.5]),
            (&[0.4, 0.6, 0.5], &[0.5, 0.5, 0.5]),
        ];
        for (a, b) in cases {
            let fwd = assess_evidence(&paired(a, b)).unwrap();
            let rev = assess_evidence(&paired(b, a)).unwrap();
            assert!(
                fwd.is_none() || rev.is_none(),
                "both directions claimed evidence: {fwd:?} vs {rev:?}"
            );
        }
    }

    #[test]
    fn perfect_separation_counts_as_large_effect() {
        let p = paired(&[0.7, 0.7, 0.7], &[0.5, 0.5, 0.5]);
        assert_eq!(assess_evidence(&p).unwrap(), Some(EvidenceLevel::Strong));
    }
}
