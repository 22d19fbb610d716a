//! Subject- and session-disjoint split construction.
//!
//! Two test partitions: `test_seen` holds held-out trials from subjects that
//! also appear in training (session-disjoint from training when session
//! metadata exists), `test_unseen` holds whole subjects withheld from
//! training. A small calibration set is carved out of each unseen subject for
//! on-the-fly normalization statistics; those trials never reach
//! `test_unseen`.

use super::trial::LabeledTrial;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// The five disjoint trial partitions.
#[derive(Debug, Clone)]
pub struct DatasetSplit<S: Scalar> {
    pub train: Vec<LabeledTrial<S>>,
    pub val: Vec<LabeledTrial<S>>,
    pub test_seen: Vec<LabeledTrial<S>>,
    pub test_unseen: Vec<LabeledTrial<S>>,
    pub calibration_unseen: Vec<LabeledTrial<S>>,
    pub n_classes: usize,
}

/// Fractions and counts controlling `make_splits`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitParams {
    pub unseen_subjects: Vec<String>,
    pub val_fraction: f64,
    pub seen_test_fraction: f64,
    pub calibration_per_subject: usize,
    pub seed: u64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            unseen_subjects: vec!["s05".into(), "s06".into()],
            val_fraction: 0.15,
            seen_test_fraction: 0.15,
            calibration_per_subject: 8,
            seed: 13,
        }
    }
}

impl<S: Scalar> DatasetSplit<S> {
    fn subjects_of(trials: &[LabeledTrial<S>]) -> BTreeSet<&str> {
        trials.iter().map(|t| t.subject_id.as_str()).collect()
    }

    /// Check every structural invariant; used by tests and after loading.
    pub fn validate(&self) -> Result<()> {
        let seen: BTreeSet<&str> = Self::subjects_of(&self.train)
            .union(&Self::subjects_of(&self.val))
            .copied()
            .collect::<BTreeSet<_>>()
            .union(&Self::subjects_of(&self.test_seen))
            .copied()
            .collect();
        let unseen: BTreeSet<&str> = Self::subjects_of(&self.test_unseen)
            .union(&Self::subjects_of(&self.calibration_unseen))
            .copied()
            .collect();
        if let Some(shared) = seen.intersection(&unseen).next() {
            return Err(Error::Format(format!(
                "subject {shared} appears on both sides of the seen/unseen boundary"
            )));
        }
        let train_subjects = Self::subjects_of(&self.train);
        for subject in Self::subjects_of(&self.test_seen) {
            if !train_subjects.contains(subject) {
                return Err(Error::Format(format!(
                    "test_seen subject {subject} missing from train"
                )));
            }
        }
        // Session disjointness between train and test_seen, per subject.
        let mut train_sessions: BTreeSet<(&str, &str)> = BTreeSet::new();
        for t in &self.train {
            if let Some(session) = &t.session_id {
                train_sessions.insert((t.subject_id.as_str(), session.as_str()));
            }
        }
        for t in &self.test_seen {
            if let Some(session) = &t.session_id {
                if train_sessions.contains(&(t.subject_id.as_str(), session.as_str())) {
                    return Err(Error::Format(format!(
                        "subject {} session {} shared between train and test_seen",
                        t.subject_id, session
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Stratified draw: group by label, shuffle within label, then interleave
/// labels so any prefix is as balanced as the counts allow.
fn interleave_by_label<S: Scalar>(
    trials: Vec<LabeledTrial<S>>,
    rng: &mut ChaCha8Rng,
) -> Vec<LabeledTrial<S>> {
    let mut by_label: BTreeMap<usize, Vec<LabeledTrial<S>>> = BTreeMap::new();
    for t in trials {
        by_label.entry(t.label).or_default().push(t);
    }
    let mut queues: Vec<Vec<LabeledTrial<S>>> = by_label
        .into_values()
        .map(|mut v| {
            v.shuffle(rng);
            v
        })
        .collect();
    let mut out = Vec::new();
    loop {
        let mut any = false;
        for q in &mut queues {
            if let Some(t) = q.pop() {
                out.push(t);
                any = true;
            }
        }
        if !any {
            break;
        }
    }
    out
}

/// Split one seen subject's trials (no usable session metadata) into
/// train/val/test_seen, stratified by label where counts allow.
fn split_by_fraction<S: Scalar>(
    trials: Vec<LabeledTrial<S>>,
    val_fraction: f64,
    test_fraction: f64,
    rng: &mut ChaCha8Rng,
    train: &mut Vec<LabeledTrial<S>>,
    val: &mut Vec<LabeledTrial<S>>,
    test: &mut Vec<LabeledTrial<S>>,
) {
    let mut by_label: BTreeMap<usize, Vec<LabeledTrial<S>>> = BTreeMap::new();
    for t in trials {
        by_label.entry(t.label).or_default().push(t);
    }
    for (_, mut group) in by_label {
        group.shuffle(rng);
        let n = group.len();
        let n_test = (test_fraction * n as f64).round() as usize;
        let n_val = (val_fraction * n as f64).round() as usize;
        if n_test + n_val >= n {
            // Too few trials to honor the fractions: round-robin so train is
            // filled first and never left empty.
            for (i, t) in group.into_iter().enumerate() {
                match i % 3 {
                    0 => train.push(t),
                    1 => val.push(t),
                    _ => test.push(t),
                }
            }
        } else {
            for (i, t) in group.into_iter().enumerate() {
                if i < n_test {
                    test.push(t);
                } else if i < n_test + n_val {
                    val.push(t);
                } else {
                    train.push(t);
                }
            }
        }
    }
}

/// Build the split. Deterministic given `params.seed`; subjects are processed
/// in sorted order.
pub fn make_splits<S: Scalar>(
    trials: Vec<LabeledTrial<S>>,
    params: &SplitParams,
) -> Result<DatasetSplit<S>> {
    if trials.is_empty() {
        return Err(Error::Config("cannot split an empty trial list".into()));
    }
    for (name, f) in [
        ("val_fraction", params.val_fraction),
        ("seen_test_fraction", params.seen_test_fraction),
    ] {
        if !(0.0 < f && f < 1.0) {
            return Err(Error::Config(format!("{name} must lie in (0,1), got {f}")));
        }
    }
    if params.val_fraction + params.seen_test_fraction >= 1.0 {
        return Err(Error::Config(
            "val_fraction + seen_test_fraction must be < 1".into(),
        ));
    }
    if params.unseen_subjects.is_empty() {
        return Err(Error::Config("unseen subject set must be nonempty".into()));
    }

    let n_classes = trials.iter().map(|t| t.label).max().unwrap() + 1;
    let mut by_subject: BTreeMap<String, Vec<LabeledTrial<S>>> = BTreeMap::new();
    for t in trials {
        by_subject.entry(t.subject_id.clone()).or_default().push(t);
    }
    let unseen_set: BTreeSet<&str> = params.unseen_subjects.iter().map(|s| s.as_str()).collect();
    for subject in &unseen_set {
        if !by_subject.contains_key(*subject) {
            return Err(Error::Config(format!(
                "unseen subject {subject} has no trials"
            )));
        }
    }
    if by_subject.keys().all(|s| unseen_set.contains(s.as_str())) {
        return Err(Error::Config("no seen subjects".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test_seen: Vec::new(),
        test_unseen: Vec::new(),
        calibration_unseen: Vec::new(),
        n_classes,
    };

    for (subject, subject_trials) in by_subject {
        if unseen_set.contains(subject.as_str()) {
            if subject_trials.len() < params.calibration_per_subject {
                return Err(Error::Config(format!(
                    "subject {subject} has {} trials, fewer than calibration_per_subject = {}",
                    subject_trials.len(),
                    params.calibration_per_subject
                )));
            }
            let ordered = interleave_by_label(subject_trials, &mut rng);
            for (i, t) in ordered.into_iter().enumerate() {
                if i < params.calibration_per_subject {
                    split.calibration_unseen.push(t);
                } else {
                    split.test_unseen.push(t);
                }
            }
            continue;
        }

        let sessions: BTreeSet<Option<&String>> = subject_trials
            .iter()
            .map(|t| t.session_id.as_ref())
            .collect();
        let has_multi_session =
            sessions.len() > 1 && subject_trials.iter().all(|t| t.session_id.is_some());
        if has_multi_session {
            // Whole sessions go to the held-out side so train and test_seen
            // never share a (subject, session) pair.
            let total = subject_trials.len();
            let mut session_names: Vec<String> = sessions.into_iter().flatten().cloned().collect();
            session_names.sort();
            session_names.shuffle(&mut rng);
            let target = (params.seen_test_fraction * total as f64).round().max(0.0) as usize;
            let mut test_sessions: BTreeSet<String> = BTreeSet::new();
            let mut claimed = 0usize;
            for name in &session_names {
                if claimed >= target || test_sessions.len() + 1 >= session_names.len() {
                    break;
                }
                claimed += subject_trials
                    .iter()
                    .filter(|t| t.session_id.as_deref() == Some(name.as_str()))
                    .count();
                test_sessions.insert(name.clone());
            }
            let mut train_side = Vec::new();
            for t in subject_trials {
                if test_sessions.contains(t.session_id.as_deref().unwrap_or_default()) {
                    split.test_seen.push(t);
                } else {
                    train_side.push(t);
                }
            }
            // Validation can share sessions with train; only train vs
            // test_seen must be session-disjoint.
            let val_frac = params.val_fraction;
            let mut dummy_test = Vec::new();
            split_by_fraction(
                train_side,
                val_frac,
                0.0,
                &mut rng,
                &mut split.train,
                &mut split.val,
                &mut dummy_test,
            );
            split.train.append(&mut dummy_test);
        } else {
            split_by_fraction(
                subject_trials,
                params.val_fraction,
                params.seen_test_fraction,
                &mut rng,
                &mut split.train,
                &mut split.val,
                &mut split.test_seen,
            );
        }
    }

    split.validate()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use ndarray::Array2;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            n_subjects: 6,
            n_classes: 4,
            channels: 2,
            timepoints: 8,
            trials_per_subject_class: 10,
            ..SyntheticSpec::default()
        }
    }

    fn params(unseen: &[&str]) -> SplitParams {
        SplitParams {
            unseen_subjects: unseen.iter().map(|s| s.to_string()).collect(),
            ..SplitParams::default()
        }
    }

    #[test]
    fn unseen_subjects_stay_out_of_training_partitions() {
        let trials = generate_synthetic::<f64>(&spec()).unwrap();
        let split = make_splits(trials, &params(&["s05", "s06"])).unwrap();
        for t in split.train.iter().chain(&split.val).chain(&split.test_seen) {
            assert!(t.subject_id != "s05" && t.subject_id != "s06");
        }
        for t in split.test_unseen.iter().chain(&split.calibration_unseen) {
            assert!(t.subject_id == "s05" || t.subject_id == "s06");
        }
    }

    #[test]
    fn calibration_counts_are_exact_and_disjoint() {
        let trials = generate_synthetic::<f64>(&spec()).unwrap();
        let split = make_splits(trials, &params(&["s05", "s06"])).unwrap();
        for subject in ["s05", "s06"] {
            let calib = split
                .calibration_unseen
                .iter()
                .filter(|t| t.subject_id == subject)
                .count();
            assert_eq!(calib, 8);
            let test = split
                .test_unseen
                .iter()
                .filter(|t| t.subject_id == subject)
                .count();
            assert_eq!(test, 40 - 8);
        }
    }

    #[test]
    fn all_subjects_unseen_is_rejected() {
        let trials = generate_synthetic::<f64>(&spec()).unwrap();
        let err =
            make_splits(trials, &params(&["s01", "s02", "s03", "s04", "s05", "s06"])).unwrap_err();
        assert!(err.to_string().contains("no seen subjects"));
    }

    #[test]
    fn too_few_trials_for_calibration_names_the_subject() {
        let trials = generate_synthetic::<f64>(&SyntheticSpec {
            trials_per_subject_class: 1,
            ..spec()
        })
        .unwrap();
        let err = make_splits(trials, &params(&["s06"])).unwrap_err();
        assert!(err.to_string().contains("s06"), "{err}");
    }

    #[test]
    fn disjointness_holds_over_many_seeds() {
        let trials = generate_synthetic::<f64>(&spec()).unwrap();
        for seed in 0..100 {
            let split = make_splits(
                trials.clone(),
                &SplitParams {
                    seed,
                    ..params(&["s05", "s06"])
                },
            )
            .unwrap();
            split.validate().unwrap();
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let trials = generate_synthetic::<f64>(&spec()).unwrap();
        let a = make_splits(trials.clone(), &params(&["s05"])).unwrap();
        let b = make_splits(trials, &params(&["s05"])).unwrap();
        assert_eq!(a.train.len(), b.train.len());
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn multi_session_subjects_are_session_disjoint() {
        // Two subjects, two sessions each, 8 trials per session.
        let mut trials = Vec::new();
        for subject in ["a", "b"] {
            for session in ["day1", "day2", "day3", "day4"] {
                for k in 0..8 {
                    trials.push(
                        LabeledTrial::new(
                            Array2::<f64>::zeros((2, 4)),
                            k % 2,
                            2,
                            subject,
                            Some(session.to_string()),
                        )
                        .unwrap(),
                    );
                }
            }
        }
        let split = make_splits(trials, &params(&["b"])).unwrap();
        split.validate().unwrap();
        assert!(!split.test_seen.is_empty());
    }
}
