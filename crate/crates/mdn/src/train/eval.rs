//! Metric suite: accuracy, macro precision/recall/F1, macro one-vs-rest AUC.

use super::trainer::softmax_vec;
use crate::data::LabeledTrial;
use crate::error::{Error, Result};
use crate::model::{ModelBundle, StatsMode, SubjectStats};
use crate::scalar::{s, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Macro-averaged classification metrics. `macro_auc` is absent for
/// degenerate single-class trial sets.
#[derive(Debug, Clone, Copy)]
pub struct MetricReport<S: Scalar> {
    pub accuracy: S,
    pub macro_f1: S,
    pub macro_precision: S,
    pub macro_recall: S,
    pub macro_auc: Option<S>,
}

/// Rank-based one-vs-rest AUC with average ranks for ties.
fn binary_auc<S: Scalar>(scores: &[S], positives: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap());
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    let rank_sum: f64 = ranks
        .iter()
        .zip(positives)
        .filter(|(_, &p)| p)
        .map(|(r, _)| *r)
        .sum();
    (rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64)
}

/// Metrics from predicted/true labels and per-class scores.
pub(crate) fn metrics_from_predictions<S: Scalar>(
    y_true: &[usize],
    y_pred: &[usize],
    scores: &[Vec<S>],
    n_classes: usize,
) -> MetricReport<S> {
    let n = y_true.len();
    let correct = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    let accuracy = s::<S>(correct as f64 / n as f64);

    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let present: Vec<usize> = (0..n_classes).filter(|c| y_true.contains(c)).collect();
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for &c in &present {
        let precision = if tp[c] + fp[c] == 0 {
            0.0
        } else {
            tp[c] as f64 / (tp[c] + fp[c]) as f64
        };
        let recall = if tp[c] + fn_[c] == 0 {
            0.0
        } else {
            tp[c] as f64 / (tp[c] + fn_[c]) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        precision_sum += precision;
        recall_sum += recall;
        f1_sum += f1;
    }
    let k = present.len() as f64;

    let macro_auc = if present.len() < 2 {
        None
    } else {
        let mut auc_sum = 0.0;
        for &c in &present {
            let class_scores: Vec<S> = scores.iter().map(|row| row[c]).collect();
            let positives: Vec<bool> = y_true.iter().map(|&t| t == c).collect();
            auc_sum += binary_auc(&class_scores, &positives);
        }
        Some(s::<S>(auc_sum / k))
    };

    MetricReport {
        accuracy,
        macro_f1: s::<S>(f1_sum / k),
        macro_precision: s::<S>(precision_sum / k),
        macro_recall: s::<S>(recall_sum / k),
        macro_auc,
    }
}

/// Evaluate the model on a trial set under the given statistics table.
///
/// Deterministic given `eval_seed`; denoising randomness is an isolated
/// stream per trial.
pub fn evaluate<S: Scalar>(
    bundle: &ModelBundle<S>,
    trials: &[LabeledTrial<S>],
    stats: &SubjectStats<S>,
    mode: StatsMode,
    eval_seed: u64,
) -> Result<MetricReport<S>> {
    if trials.is_empty() {
        return Err(Error::Dimension(
            "cannot evaluate an empty trial list".into(),
        ));
    }
    let mut y_true = Vec::with_capacity(trials.len());
    let mut y_pred = Vec::with_capacity(trials.len());
    let mut scores = Vec::with_capacity(trials.len());
    for (i, trial) in trials.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
        rng.set_stream(i as u64);
        let fwd = bundle.forward_trial(
            &trial.signal,
            &trial.subject_id,
            Some((stats, mode)),
            &mut rng,
        )?;
        let probs = softmax_vec(&fwd.logits);
        let pred = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        y_true.push(trial.label);
        y_pred.push(pred);
        scores.push(probs.to_vec());
    }
    Ok(metrics_from_predictions(
        &y_true,
        &y_pred,
        &scores,
        bundle.config.n_classes,
    ))
}
