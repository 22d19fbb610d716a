//! Training, evaluation, and multi-seed orchestration.

mod config;
mod eval;
mod results;
mod trainer;

pub use config::TrainConfig;
pub use eval::{evaluate, MetricReport};
pub use results::{ResultRow, SeedResultTable};
pub use trainer::{accuracy_on, softmax_vec, train, EpochRecord, TrainHistory};

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::model::{ModelBundle, StatsMode};
use crate::scalar::Scalar;

/// Everything produced by a multi-seed run of one configuration.
pub struct SeedRunOutput<S: Scalar> {
    pub table: SeedResultTable<S>,
    pub bundles: Vec<(u64, ModelBundle<S>)>,
    pub histories: Vec<(u64, TrainHistory<S>)>,
}

fn push_metrics<S: Scalar>(
    table: &mut SeedResultTable<S>,
    config_id: &str,
    seed: u64,
    split: &str,
    report: &MetricReport<S>,
) {
    table.push(config_id, seed, split, "accuracy", report.accuracy);
    table.push(config_id, seed, split, "macro_f1", report.macro_f1);
    table.push(
        config_id,
        seed,
        split,
        "macro_precision",
        report.macro_precision,
    );
    table.push(config_id, seed, split, "macro_recall", report.macro_recall);
    if let Some(auc) = report.macro_auc {
        table.push(config_id, seed, split, "macro_auc", auc);
    }
}

/// Train and evaluate one configuration under every seed.
///
/// Per seed: a full training run, seen-split evaluation with the trained
/// statistics, then unseen-split evaluation with statistics fitted from the
/// unseen subjects' calibration trials only.
pub fn run_seeds<S: Scalar>(
    base: &TrainConfig,
    split: &DatasetSplit<S>,
    seeds: &[u64],
    config_id: &str,
) -> Result<SeedRunOutput<S>> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    let mut table = SeedResultTable::new();
    let mut bundles = Vec::new();
    let mut histories = Vec::new();
    for &seed in seeds {
        let mut config = base.clone();
        config.seed = seed;
        let (bundle, history) = train(&config, split)?;

        // The unseen side must never have been touched during training.
        for trial in split.test_unseen.iter().chain(&split.calibration_unseen) {
            if history.trained_subjects.contains(&trial.subject_id) {
                return Err(Error::Runtime(format!(
                    "unseen subject {} leaked into training",
                    trial.subject_id
                )));
            }
        }

        if !split.test_seen.is_empty() {
            let stats = bundle
                .train_stats
                .as_ref()
                .ok_or_else(|| Error::Runtime("training left no statistics".into()))?;
            let report = evaluate(
                &bundle,
                &split.test_seen,
                stats,
                StatsMode::Seen,
                seed ^ 0xEE,
            )?;
            push_metrics(&mut table, config_id, seed, "seen", &report);
        }
        if !split.test_unseen.is_empty() {
            let calib = bundle.fit_stats_from_trials(&split.calibration_unseen, seed ^ 0xCA)?;
            let report = evaluate(
                &bundle,
                &split.test_unseen,
                &calib,
                StatsMode::Unseen,
                seed ^ 0xBE,
            )?;
            push_metrics(&mut table, config_id, seed, "unseen", &report);
        }
        bundles.push((seed, bundle));
        histories.push((seed, history));
    }
    table.sort();
    Ok(SeedRunOutput {
        table,
        bundles,
        histories,
    })
}
