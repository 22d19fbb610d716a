//! The three loss terms, their annealing schedules, and the total objective.
//!
//! Public loss functions evaluate through the same graph code the trainer
//! differentiates, so there is exactly one implementation of each formula.

use crate::error::{Error, Result};
use crate::nn::{Graph, Var};
use crate::scalar::{s, Scalar};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Classification loss flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassificationKind {
    #[serde(rename = "CE")]
    Ce,
    #[serde(rename = "MSE")]
    Mse,
}

/// Weighting and scheduling of the three objective terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossWeights {
    pub classification_kind: ClassificationKind,
    pub alpha: f64,
    pub beta_max: f64,
    pub beta_epochs: usize,
    pub gamma_max: f64,
    pub gamma_epochs: usize,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            classification_kind: ClassificationKind::Ce,
            alpha: 1.0,
            beta_max: 0.05,
            beta_epochs: 100,
            gamma_max: 0.2,
            gamma_epochs: 50,
            tau: 0.07,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta_max < 0.0 || self.gamma_max < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.beta_epochs < 1 || self.gamma_epochs < 1 {
            return Err(Error::Config("schedule epoch scales must be >= 1".into()));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config("tau must be positive".into()));
        }
        Ok(())
    }

    /// `beta = min(1, epoch/beta_epochs) * beta_max`.
    pub fn schedule_beta<S: Scalar>(&self, epoch: usize) -> S {
        s::<S>((epoch as f64 / self.beta_epochs as f64).min(1.0) * self.beta_max)
    }

    /// `gamma = min(1, epoch/gamma_epochs) * gamma_max`.
    pub fn schedule_gamma<S: Scalar>(&self, epoch: usize) -> S {
        s::<S>((epoch as f64 / self.gamma_epochs as f64).min(1.0) * self.gamma_max)
    }
}

/// Per-term values of one step's objective; `total` is the scheduled
/// weighted sum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown<S: Scalar> {
    pub classification: S,
    pub reconstruction: S,
    pub contrastive: S,
    pub total: S,
}

/// Raw (unweighted) term values.
#[derive(Debug, Clone, Copy)]
pub struct LossParts<S: Scalar> {
    pub classification: S,
    pub reconstruction: S,
    pub contrastive: S,
}

/// Apply the schedules at `epoch` and combine.
pub fn total_loss<S: Scalar>(
    parts: LossParts<S>,
    weights: &LossWeights,
    epoch: usize,
) -> LossBreakdown<S> {
    let alpha = s::<S>(weights.alpha);
    let beta = weights.schedule_beta::<S>(epoch);
    let gamma = weights.schedule_gamma::<S>(epoch);
    LossBreakdown {
        classification: parts.classification,
        reconstruction: parts.reconstruction,
        contrastive: parts.contrastive,
        total: alpha * parts.classification
            + beta * parts.reconstruction
            + gamma * parts.contrastive,
    }
}

fn one_hot<S: Scalar>(labels: &[usize], n_classes: usize) -> Array2<S> {
    let mut y = Array2::zeros((n_classes, labels.len()));
    for (b, &label) in labels.iter().enumerate() {
        y[[label, b]] = S::one();
    }
    y
}

/// Graph builder: mean cross-entropy of `logits` (`[K, B]`) against labels.
pub fn ce_loss_graph<S: Scalar>(g: &mut Graph<S>, logits: Var, labels: &[usize]) -> Var {
    let k = g.value(logits).nrows();
    let b = labels.len();
    let lse = g.logsumexp_cols(logits);
    let lse_sum = g.sum_all(lse);
    let picked = g.weighted_sum_const(logits, one_hot(labels, k));
    let diff = g.sub(lse_sum, picked);
    g.scale(diff, S::one() / s::<S>(b as f64))
}

/// Graph builder: mean squared error of predictions (`[K, B]`) against a
/// target matrix of the same shape; per-sample squared norms averaged over
/// the batch.
pub fn mse_graph<S: Scalar>(g: &mut Graph<S>, predictions: Var, target: Array2<S>) -> Var {
    let b = target.ncols();
    let t = g.constant(target);
    let diff = g.sub(predictions, t);
    let sq = g.mul(diff, diff);
    let total = g.sum_all(sq);
    g.scale(total, S::one() / s::<S>(b as f64))
}

/// Graph builder: supervised contrastive loss over unit-norm projection
/// columns (`[D', B]`).
///
/// For each anchor `i`, positives `P(i)` are other samples with the same
/// label and the denominator runs over all non-anchor samples `A(i)`.
/// Anchors without positives contribute zero and are excluded from the
/// anchor average.
pub fn supcon_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    projections: Var,
    labels: &[usize],
    tau: S,
) -> Var {
    let b = labels.len();
    assert_eq!(g.value(projections).ncols(), b);
    let positives: Vec<Vec<usize>> = (0..b)
        .map(|i| {
            (0..b)
                .filter(|&p| p != i && labels[p] == labels[i])
                .collect()
        })
        .collect();
    let n_valid = positives.iter().filter(|p| !p.is_empty()).count();
    if n_valid == 0 {
        return g.constant(Array2::zeros((1, 1)));
    }

    let zt = g.transpose(projections);
    let sims = g.matmul(zt, projections);
    let logits = g.scale(sims, S::one() / tau);
    let lse = g.logsumexp_rows_offdiag(logits);

    let inv_valid = S::one() / s::<S>(n_valid as f64);
    let mut sim_coeff = Array2::<S>::zeros((b, b));
    let mut lse_coeff = Array2::<S>::zeros((b, 1));
    for (i, pos) in positives.iter().enumerate() {
        if pos.is_empty() {
            continue;
        }
        let w = -S::one() / s::<S>(pos.len() as f64) * inv_valid;
        for &p in pos {
            sim_coeff[[i, p]] = w;
        }
        lse_coeff[[i, 0]] = inv_valid;
    }
    let from_sims = g.weighted_sum_const(logits, sim_coeff);
    let from_lse = g.weighted_sum_const(lse, lse_coeff);
    g.add(from_sims, from_lse)
}

/// Graph builder: mean absolute difference over all cells.
pub fn l1_graph<S: Scalar>(g: &mut Graph<S>, a: Var, b: Var) -> Var {
    let diff = g.sub(a, b);
    let absdiff = g.abs(diff);
    g.mean_all(absdiff)
}

/// Mean cross-entropy `-log softmax(logits)[label]` over a batch of logit
/// columns.
pub fn ce_loss<S: Scalar>(logits: &Array2<S>, labels: &[usize]) -> Result<S> {
    let (k, b) = logits.dim();
    if labels.len() != b {
        return Err(Error::Dimension(format!(
            "{} labels for {b} logit columns",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Config(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let mut g = Graph::new();
    let lv = g.constant(logits.clone());
    let loss = ce_loss_graph(&mut g, lv, labels);
    Ok(g.scalar_value(loss))
}

/// Mean of `||prediction - target||^2` over batch columns.
pub fn mse_class_loss<S: Scalar>(predictions: &Array2<S>, one_hot: &Array2<S>) -> Result<S> {
    if predictions.dim() != one_hot.dim() {
        return Err(Error::Dimension(format!(
            "prediction shape {:?} vs target shape {:?}",
            predictions.dim(),
            one_hot.dim()
        )));
    }
    let mut g = Graph::new();
    let pv = g.constant(predictions.clone());
    let loss = mse_graph(&mut g, pv, one_hot.clone());
    Ok(g.scalar_value(loss))
}

/// Supervised contrastive loss over unit-norm projection columns (`[D', B]`).
pub fn supcon_loss<S: Scalar>(projections: &Array2<S>, labels: &[usize], tau: S) -> Result<S> {
    if tau <= S::zero() {
        return Err(Error::Config("tau must be positive".into()));
    }
    let b = projections.ncols();
    if b < 2 {
        return Err(Error::Dimension(
            "contrastive loss needs a batch of >= 2".into(),
        ));
    }
    if labels.len() != b {
        return Err(Error::Dimension(format!(
            "{} labels for {b} projections",
            labels.len()
        )));
    }
    let mut g = Graph::new();
    let pv = g.constant(projections.clone());
    let loss = supcon_loss_graph(&mut g, pv, labels, tau);
    Ok(g.scalar_value(loss))
}

/// Mean absolute difference over all cells.
pub fn l1_recon<S: Scalar>(a: &Array2<S>, b: &Array2<S>) -> Result<S> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "l1 shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let mut g = Graph::new();
    let av = g.constant(a.clone());
    let bv = g.constant(b.clone());
    let loss = l1_graph(&mut g, av, bv);
    Ok(g.scalar_value(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_loss_grads;
    use crate::nn::{ParamGroup, ParamStore};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_fixtures() {
        let w = LossWeights::default();
        assert_abs_diff_eq!(w.schedule_beta::<f64>(100), 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(w.schedule_beta::<f64>(250), 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(w.schedule_gamma::<f64>(50), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(w.schedule_beta::<f64>(0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.schedule_gamma::<f64>(0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.schedule_beta::<f64>(25), 0.0125, epsilon = 1e-12);
        assert_abs_diff_eq!(w.schedule_gamma::<f64>(25), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn schedules_are_nondecreasing_and_saturate() {
        let w = LossWeights::default();
        let mut prev_b = -1.0f64;
        let mut prev_g = -1.0f64;
        for epoch in 0..200 {
            let b = w.schedule_beta::<f64>(epoch);
            let gm = w.schedule_gamma::<f64>(epoch);
            assert!(b >= prev_b && gm >= prev_g);
            prev_b = b;
            prev_g = gm;
        }
        assert_eq!(prev_b, 0.05);
        assert_eq!(prev_g, 0.2);
    }

    #[test]
    fn ce_uniform_logits_is_ln_k() {
        let logits = array![[0.0], [0.0]];
        let loss = ce_loss(&logits, &[0]).unwrap();
        assert_abs_diff_eq!(loss, (2.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn ce_confident_logits_tend_to_zero() {
        let logits = array![[30.0], [0.0]];
        assert!(ce_loss(&logits, &[0]).unwrap() < 1e-10);
        assert!(ce_loss(&array![[30.0], [0.0]], &[1]).unwrap() > 10.0);
    }

    #[test]
    fn ce_matches_logsumexp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let k = rng.gen_range(2..6);
            let b = rng.gen_range(1..5);
            let logits = Array2::from_shape_fn((k, b), |_| rng.gen_range(-3.0..3.0));
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
            let loss = ce_loss(&logits, &labels).unwrap();
            // independent oracle: direct log-sum-exp per column
            let mut expected = 0.0;
            for (col, &label) in labels.iter().enumerate() {
                let column: Vec<f64> = logits.column(col).to_vec();
                let max = column.iter().cloned().fold(f64::MIN, f64::max);
                let lse = max + column.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                expected += lse - logits[[label, col]];
            }
            expected /= b as f64;
            assert_abs_diff_eq!(loss, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn ce_label_out_of_range_errors() {
        assert!(ce_loss(&array![[0.0], [0.0]], &[2]).is_err());
    }

    #[test]
    fn mse_fixtures() {
        assert_eq!(
            mse_class_loss(&array![[1.0], [0.0]], &array![[1.0], [0.0]]).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(
            mse_class_loss(&array![[1.0], [0.0]], &array![[0.0], [1.0]]).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let p = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-2.0..2.0));
            let t = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-2.0..2.0));
            assert!(mse_class_loss(&p, &t).unwrap() >= 0.0);
        }
    }

    fn normalize_cols(z: &mut Array2<f64>) {
        for mut col in z.columns_mut() {
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            col.mapv_inplace(|v| v / norm);
        }
    }

    /// Triple-loop oracle over anchors, positives, and denominators.
    fn supcon_oracle(z: &Array2<f64>, labels: &[usize], tau: f64) -> f64 {
        let b = labels.len();
        let dot = |i: usize, j: usize| {
            z.column(i)
                .iter()
                .zip(z.column(j).iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let mut total = 0.0;
        let mut valid = 0usize;
        for i in 0..b {
            let positives: Vec<usize> = (0..b)
                .filter(|&p| p != i && labels[p] == labels[i])
                .collect();
            if positives.is_empty() {
                continue;
            }
            valid += 1;
            let mut term = 0.0;
            for &p in &positives {
                let denom: f64 = (0..b)
                    .filter(|&a| a != i)
                    .map(|a| (dot(i, a) / tau).exp())
                    .sum();
                term += ((dot(i, p) / tau).exp() / denom).ln();
            }
            total += -term / positives.len() as f64;
        }
        if valid == 0 {
            0.0
        } else {
            total / valid as f64
        }
    }

    #[test]
    fn supcon_identical_pair_is_zero() {
        let z = array![[1.0, 1.0], [0.0, 0.0]];
        assert_abs_diff_eq!(
            supcon_loss(&z, &[1, 1], 0.07).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn supcon_pair_with_distinct_labels_is_zero() {
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(supcon_loss(&z, &[0, 1], 0.07).unwrap(), 0.0);
    }

    #[test]
    fn supcon_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let b = rng.gen_range(2..=8);
            let d = rng.gen_range(2..5);
            let mut z = Array2::from_shape_fn((d, b), |_| rng.gen_range(-1.0..1.0));
            normalize_cols(&mut z);
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..3)).collect();
            let loss = supcon_loss(&z, &labels, 0.07).unwrap();
            assert_abs_diff_eq!(loss, supcon_oracle(&z, &labels, 0.07), epsilon = 1e-9);
        }
    }

    #[test]
    fn supcon_invariant_under_orthogonal_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let d = 4;
        // Gram-Schmidt on a random matrix gives an orthogonal rotation.
        let raw = Array2::from_shape_fn((d, d), |_| rng.gen_range(-1.0..1.0));
        let mut q: Vec<Vec<f64>> = Vec::new();
        for i in 0..d {
            let mut v: Vec<f64> = raw.row(i).to_vec();
            for u in &q {
                let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (vj, uj) in v.iter_mut().zip(u) {
                    *vj -= proj * uj;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
        let rot = Array2::from_shape_fn((d, d), |(i, j)| q[i][j]);

        let b = 6;
        let mut z = Array2::from_shape_fn((d, b), |_| rng.gen_range(-1.0..1.0));
        normalize_cols(&mut z);
        let labels = vec![0, 1, 2, 0, 1, 2];
        let before = supcon_loss(&z, &labels, 0.07).unwrap();
        let rotated = rot.dot(&z);
        let after = supcon_loss(&rotated, &labels, 0.07).unwrap();
        assert_abs_diff_eq!(before, after, epsilon = 1e-6);
    }

    #[test]
    fn supcon_rejects_bad_tau_and_tiny_batches() {
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(supcon_loss(&z, &[0, 1], 0.0).is_err());
        assert!(supcon_loss(&array![[1.0]], &[0], 0.07).is_err());
    }

    #[test]
    fn l1_fixtures() {
        let a = array![[0.0, 2.0]];
        let b = array![[1.0, 1.0]];
        assert_abs_diff_eq!(l1_recon(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(l1_recon(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_recon(&a, &b).unwrap(), l1_recon(&b, &a).unwrap());
        assert!(l1_recon(&a, &array![[1.0], [1.0]]).is_err());
    }

    #[test]
    fn total_loss_fixtures() {
        let w = LossWeights::default();
        let zero = total_loss(
            LossParts {
                classification: 0.0,
                reconstruction: 0.0,
                contrastive: 0.0,
            },
            &w,
            10,
        );
        assert_eq!(zero.total, 0.0);

        let ones = LossParts {
            classification: 1.0,
            reconstruction: 1.0,
            contrastive: 1.0,
        };
        assert_abs_diff_eq!(total_loss(ones, &w, 100).total, 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(total_loss(ones, &w, 0).total, 1.0, epsilon = 1e-12);
        let at7 = total_loss(ones, &w, 7);
        assert_abs_diff_eq!(
            at7.total,
            w.alpha * at7.classification
                + w.schedule_beta::<f64>(7) * at7.reconstruction
                + w.schedule_gamma::<f64>(7) * at7.contrastive,
            epsilon = 1e-9
        );
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut store = ParamStore::<f64>::new();
        let logits = store.register(
            "logits",
            ParamGroup::Classifier,
            Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0)),
        );
        let labels = vec![0, 2, 1, 0];

        check_loss_grads(
            &mut store,
            &[logits],
            |g, st| {
                let lv = g.param(st, logits);
                ce_loss_graph(g, lv, &labels)
            },
            1e-6,
            1e-4,
        );

        let target = one_hot::<f64>(&labels, 3);
        check_loss_grads(
            &mut store,
            &[logits],
            |g, st| {
                let lv = g.param(st, logits);
                let soft = g.softmax_cols(lv);
                mse_graph(g, soft, target.clone())
            },
            1e-6,
            1e-4,
        );

        let proj = store.register(
            "proj",
            ParamGroup::Projection,
            Array2::from_shape_fn((3, 5), |_| rng.gen_range(-1.0..1.0)),
        );
        let proj_labels = vec![0, 1, 0, 1, 0];
        check_loss_grads(
            &mut store,
            &[proj],
            |g, st| {
                let pv = g.param(st, proj);
                supcon_loss_graph(g, pv, &proj_labels, 0.07)
            },
            1e-6,
            1e-4,
        );

        let recon = store.register(
            "recon",
            ParamGroup::Decoder,
            Array2::from_shape_fn((2, 6), |_| rng.gen_range(-1.0..1.0)),
        );
        let target_sig = Array2::from_shape_fn((2, 6), |_| rng.gen_range(-1.0..1.0));
        check_loss_grads(
            &mut store,
            &[recon],
            |g, st| {
                let rv = g.param(st, recon);
                let tv = g.constant(target_sig.clone());
                l1_graph(g, rv, tv)
            },
            1e-6,
            1e-4,
        );
    }
}
