//! Cohen's d effect sizes with confidence intervals, and relative improvement.

use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Seed-aligned per-seed metric values for two configurations.
///
/// `a[i]` and `b[i]` come from the same seed.
#[derive(Debug, Clone)]
pub struct PairedSamples<S: Scalar> {
    pub a: Vec<S>,
    pub b: Vec<S>,
}

impl<S: Scalar> PairedSamples<S> {
    pub fn new(a: Vec<S>, b: Vec<S>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Dimension(format!(
                "paired samples must be equal length, got {} and {}",
                a.len(),
                b.len()
            )));
        }
        if a.is_empty() {
            return Err(Error::Dimension("paired samples must be nonempty".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Format(
                "paired samples contain non-finite values".into(),
            ));
        }
        Ok(Self { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Per-seed differences `a_i - b_i`.
    pub fn diffs(&self) -> Vec<S> {
        self.a.iter().zip(&self.b).map(|(&x, &y)| x - y).collect()
    }

    pub fn mean_a(&self) -> S {
        mean(&self.a)
    }

    pub fn mean_b(&self) -> S {
        mean(&self.b)
    }
}

pub(crate) fn mean<S: Scalar>(xs: &[S]) -> S {
    let n = s::<S>(xs.len() as f64);
    xs.iter().copied().sum::<S>() / n
}

/// Unbiased (n-1) sample variance.
pub(crate) fn sample_variance<S: Scalar>(xs: &[S]) -> S {
    let m = mean(xs);
    let n = xs.len();
    if n < 2 {
        return S::zero();
    }
    let ss: S = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    ss / s::<S>((n - 1) as f64)
}

/// Standardized mean difference with its standard error and 95% CI.
#[derive(Debug, Clone, Copy)]
pub struct EffectSize<S: Scalar> {
    pub d: S,
    pub se: S,
    pub ci_low: S,
    pub ci_high: S,
    pub df: usize,
}

impl<S: Scalar> EffectSize<S> {
    /// Zero pooled variance with unequal means: the effect is reported as an
    /// infinite sentinel rather than a finite number.
    pub fn is_infinite(&self) -> bool {
        self.d.is_infinite()
    }
}

/// Cohen's d between `a` and `b`:
/// `d = (mean_a - mean_b) / s_pooled` with
/// `s_pooled = sqrt(((n1-1)s1^2 + (n2-1)s2^2) / (n1+n2-2))`,
/// `SE_d = sqrt((n1+n2)/(n1*n2) + d^2/(2(n1+n2)))`,
/// and a 95% CI of `d ± t_{0.025, n1+n2-2} * SE_d`.
pub fn cohens_d<S: Scalar>(samples: &PairedSamples<S>) -> Result<EffectSize<S>> {
    let n1 = samples.a.len();
    let n2 = samples.b.len();
    if n1 < 2 || n2 < 2 {
        return Err(Error::Dimension(format!(
            "effect size needs at least 2 values per group, got {n1} and {n2}"
        )));
    }
    let df = n1 + n2 - 2;
    let ma = samples.mean_a().to_f64_lossy();
    let mb = samples.mean_b().to_f64_lossy();
    let v1 = sample_variance(&samples.a).to_f64_lossy();
    let v2 = sample_variance(&samples.b).to_f64_lossy();
    let n1f = n1 as f64;
    let n2f = n2 as f64;
    let pooled = (((n1f - 1.0) * v1 + (n2f - 1.0) * v2) / df as f64).sqrt();

    if pooled == 0.0 && ma != mb {
        // Perfect separation: the formula is singular, report an infinite sentinel.
        let sign = if ma > mb {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        return Ok(EffectSize {
            d: s(sign),
            se: s(f64::INFINITY),
            ci_low: s(sign),
            ci_high: s(sign),
            df,
        });
    }

    let d = if pooled == 0.0 {
        0.0
    } else {
        (ma - mb) / pooled
    };
    let se = ((n1f + n2f) / (n1f * n2f) + d * d / (2.0 * (n1f + n2f))).sqrt();
    let tq = StudentsT::new(0.0, 1.0, df as f64)
        .expect("df >= 2 yields a valid t distribution")
        .inverse_cdf(0.975);
    Ok(EffectSize {
        d: s(d),
        se: s(se),
        ci_low: s(d - tq * se),
        ci_high: s(d + tq * se),
        df,
    })
}

/// `(mean_a - mean_b) / |mean_b|`; undefined for a zero baseline.
pub fn relative_improvement<S: Scalar>(mean_a: S, mean_b: S) -> Result<S> {
    if mean_b == S::zero() {
        return Err(Error::Config(
            "relative improvement undefined for zero baseline mean".into(),
        ));
    }
    Ok((mean_a - mean_b) / mean_b.abs())
}
