//! The per-seed result table and its CSV form.
//!
//! One row per measurement: `config_id,seed,split,metric,value`. UTF-8,
//! `.` decimal, no thousands separators. Values print in Rust's shortest
//! round-trip form so a reloaded table reproduces the originals exactly.

use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow<S: Scalar> {
    pub config_id: String,
    pub seed: u64,
    pub split: String,
    pub metric: String,
    pub value: S,
}

#[derive(Debug, Clone, Default)]
pub struct SeedResultTable<S: Scalar> {
    pub rows: Vec<ResultRow<S>>,
}

impl<S: Scalar> SeedResultTable<S> {
    pub fn new() -> Self {
        Self { rows: Vec::new() }
    }

    pub fn push(&mut self, config_id: &str, seed: u64, split: &str, metric: &str, value: S) {
        self.rows.push(ResultRow {
            config_id: config_id.to_string(),
            seed,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
        });
    }

    pub fn extend(&mut self, other: SeedResultTable<S>) {
        self.rows.extend(other.rows);
    }

    /// Deterministic row order: (config_id, seed, split, metric).
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (&a.config_id, a.seed, &a.split, &a.metric).cmp(&(
                &b.config_id,
                b.seed,
                &b.split,
                &b.metric,
            ))
        });
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["config_id", "seed", "split", "metric", "value"])?;
        for row in &self.rows {
            writer.write_record([
                row.config_id.as_str(),
                &row.seed.to_string(),
                row.split.as_str(),
                row.metric.as_str(),
                &format!("{}", row.value.to_f64_lossy()),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        let headers = reader.headers()?.clone();
        let expected = ["config_id", "seed", "split", "metric", "value"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Format(format!(
                "results CSV header must be {expected:?}, got {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let seed: u64 = record[1]
                .parse()
                .map_err(|_| Error::Format(format!("row {i}: bad seed {:?}", &record[1])))?;
            let value: f64 = record[4]
                .parse()
                .map_err(|_| Error::Format(format!("row {i}: bad value {:?}", &record[4])))?;
            rows.push(ResultRow {
                config_id: record[0].to_string(),
                seed,
                split: record[2].to_string(),
                metric: record[3].to_string(),
                value: s::<S>(value),
            });
        }
        Ok(Self { rows })
    }

    pub fn metrics(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.metric.as_str()).collect()
    }

    pub fn splits(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.split.as_str()).collect()
    }

    /// Seed-aligned per-config values for one (metric, split): every config
    /// must carry the identical seed set, and values are ordered by seed.
    pub fn aligned_samples(&self, metric: &str, split: &str) -> Result<BTreeMap<String, Vec<S>>> {
        let mut per_config: BTreeMap<String, BTreeMap<u64, S>> = BTreeMap::new();
        for row in &self.rows {
            if row.metric == metric && row.split == split {
                let prior = per_config
                    .entry(row.config_id.clone())
                    .or_default()
                    .insert(row.seed, row.value);
                if prior.is_some() {
                    return Err(Error::Format(format!(
                        "duplicate row for config {} seed {} {}/{}",
                        row.config_id, row.seed, split, metric
                    )));
                }
            }
        }
        if per_config.is_empty() {
            return Err(Error::Lookup(format!(
                "no rows for metric {metric:?} on split {split:?}"
            )));
        }
        let seed_sets: BTreeMap<&String, Vec<u64>> = per_config
            .iter()
            .map(|(config, by_seed)| (config, by_seed.keys().copied().collect()))
            .collect();
        let reference = seed_sets.values().next().unwrap().clone();
        let offenders: Vec<String> = seed_sets
            .iter()
            .filter(|(_, seeds)| **seeds != reference)
            .map(|(config, seeds)| format!("{config} has seeds {seeds:?}"))
            .collect();
        if !offenders.is_empty() {
            return Err(Error::Config(format!(
                "mismatched seed sets (reference {reference:?}): {}",
                offenders.join("; ")
            )));
        }
        Ok(per_config
            .into_iter()
            .map(|(config, by_seed)| (config, by_seed.into_values().collect()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn csv_round_trip_reproduces_rows() {
        let mut table = SeedResultTable::<f64>::new();
        table.push("a", 1, "seen", "accuracy", 0.8512345678901234);
        table.push("a", 2, "seen", "accuracy", 1.0 / 3.0);
        table.push("b", 1, "unseen", "macro_f1", 0.125);
        table.sort();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("results.csv");
        table.save_csv(&path).unwrap();
        let loaded = SeedResultTable::<f64>::load_csv(&path).unwrap();
        assert_eq!(table.rows, loaded.rows);
    }

    #[test]
    fn aligned_samples_orders_by_seed_and_checks_sets() {
        let mut table = SeedResultTable::<f64>::new();
        for (config, seed, value) in [
            ("a", 3u64, 0.3),
            ("a", 1, 0.1),
            ("a", 2, 0.2),
            ("b", 1, 0.4),
            ("b", 2, 0.5),
            ("b", 3, 0.6),
        ] {
            table.push(config, seed, "seen", "accuracy", value);
        }
        let samples = table.aligned_samples("accuracy", "seen").unwrap();
        assert_eq!(samples["a"], vec![0.1, 0.2, 0.3]);
        assert_eq!(samples["b"], vec![0.4, 0.5, 0.6]);

        table.push("c", 1, "seen", "accuracy", 0.9);
        let err = table.aligned_samples("accuracy", "seen").unwrap_err();
        assert!(err.to_string().contains("c has seeds"), "{err}");
    }

    #[test]
    fn missing_metric_is_a_lookup_error() {
        let table = SeedResultTable::<f64>::new();
        assert!(table.aligned_samples("accuracy", "seen").is_err());
    }
}
