//! Bayesian paired comparison with a region of practical equivalence (ROPE).
//!
//! The posterior over the mean per-seed difference is the location-scale
//! Student-t that falls out of a flat prior on a normal model: with `n`
//! differences of sample mean `m` and sample sd `sd`,
//! `mu ~ m + (sd/sqrt(n)) * T_{n-1}`. Posterior mass is split into
//! `P(mu < -rho)`, `P(-rho <= mu <= rho)`, and `P(mu > rho)`.

use super::effect::{mean, sample_variance, PairedSamples};
use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub const DEFAULT_ROPE: f64 = 0.01;
pub const SUPERIORITY_THRESHOLD: f64 = 0.85;

/// Posterior mass to the left of, inside, and to the right of the ROPE.
#[derive(Debug, Clone, Copy)]
pub struct BayesPosterior<S: Scalar> {
    pub p_left: S,
    pub p_rope: S,
    pub p_right: S,
}

impl<S: Scalar> BayesPosterior<S> {
    /// Bayesian evidence of superiority of `a` over `b`.
    pub fn superior(&self) -> bool {
        self.p_right > s(SUPERIORITY_THRESHOLD)
    }
}

/// ROPE posterior for the mean of the per-seed differences `a_i - b_i`.
///
/// Zero-variance differences collapse the posterior to a point mass: all mass
/// goes to whichever region contains the mean difference.
pub fn bayes_rope<S: Scalar>(samples: &PairedSamples<S>, rope: S) -> Result<BayesPosterior<S>> {
    if samples.len() < 2 {
        return Err(Error::Dimension(
            "Bayesian comparison needs at least 2 paired values".into(),
        ));
    }
    if rope < S::zero() {
        return Err(Error::Config("ROPE threshold must be nonnegative".into()));
    }
    let diffs = samples.diffs();
    let n = diffs.len() as f64;
    let m = mean(&diffs).to_f64_lossy();
    let sd = sample_variance(&diffs).to_f64_lossy().sqrt();
    let rho = rope.to_f64_lossy();

    if sd == 0.0 {
        let (l, r, c) = if m < -rho {
            (1.0, 0.0, 0.0)
        } else if m > rho {
            (0.0, 1.0, 0.0)
        } else {
            (0.0, 0.0, 1.0)
        };
        return Ok(BayesPosterior {
            p_left: s(l),
            p_rope: s(c),
            p_right: s(r),
        });
    }

    let scale = sd / n.sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("n >= 2 yields a valid t distribution");
    let f_lo = t.cdf((-rho - m) / scale);
    let f_hi = t.cdf((rho - m) / scale);
    Ok(BayesPosterior {
        p_left: s(f_lo),
        p_rope: s(f_hi - f_lo),
        p_right: s(1.0 - f_hi),
    })
}
