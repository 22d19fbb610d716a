//! Rendering of the four comparison tables as CSV and markdown.
//!
//! Schemas:
//! - practical evidence: Config, Wins, Losses, Total, Rate, Win List,
//!   Loss List, Evidence
//! - Bayesian ROPE: config_1, config_2, mean_diff, p_left, p_rope, p_right,
//!   n_seeds
//! - Wilcoxon: config_1, config_2, mean_diff, p_value, mean_1, mean_2, n_seeds
//! - permutation: config_1, config_2, mean_1, mean_2, p_value, statistic,
//!   n_seeds, p_value_corrected, significant
//!
//! Rows are ordered lexicographically by config ids so output is bit-stable.

use super::ComparisonSet;
use crate::error::Result;
use crate::scalar::Scalar;
use std::fs;
use std::path::{Path, PathBuf};

const SIGNIFICANCE_LEVEL: f64 = 0.05;

fn fmt10<S: Scalar>(v: S) -> String {
    let x = v.to_f64_lossy();
    if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.10}")
    }
}

fn fmt_rate<S: Scalar>(v: Option<S>) -> String {
    match v {
        Some(r) => format!("{:.3}", r.to_f64_lossy()),
        None => String::new(),
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn write(&self, dir: &Path, stem: &str, out: &mut Vec<PathBuf>) -> Result<()> {
        let csv_path = dir.join(format!("{stem}.csv"));
        let mut writer = csv::Writer::from_path(&csv_path)?;
        writer.write_record(&self.header)?;
        for row in &self.rows {
            writer.write_record(row)?;
        }
        writer.flush()?;
        out.push(csv_path);

        let md_path = dir.join(format!("{stem}.md"));
        let mut md = String::new();
        md.push_str(&format!("| {} |\n", self.header.join(" | ")));
        md.push_str(&format!("|{}\n", "---|".repeat(self.header.len())));
        for row in &self.rows {
            md.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        fs::write(&md_path, md)?;
        out.push(md_path);
        Ok(())
    }
}

/// Write all four tables for one analysis into `dir`, returning the paths.
pub fn render_reports<S: Scalar>(set: &ComparisonSet<S>, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();

    let practical = Table {
        header: [
            "Config",
            "Wins",
            "Losses",
            "Total",
            "Rate",
            "Win List",
            "Loss List",
            "Evidence",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        rows: set
            .win_analysis
            .summaries
            .iter()
            .map(|c| {
                vec![
                    c.config.clone(),
                    c.wins.to_string(),
                    c.losses.to_string(),
                    c.total.to_string(),
                    fmt_rate(c.rate),
                    c.win_list.join("; "),
                    c.loss_list.join("; "),
                    c.evidence_tally
                        .iter()
                        .map(|(level, count)| format!("{level}:{count}"))
                        .collect::<Vec<_>>()
                        .join("; "),
                ]
            })
            .collect(),
    };
    practical.write(dir, "practical_evidence", &mut paths)?;

    let bayes = Table {
        header: [
            "config_1",
            "config_2",
            "mean_diff",
            "p_left",
            "p_rope",
            "p_right",
            "n_seeds",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        rows: set
            .pairs
            .iter()
            .map(|p| {
                vec![
                    p.config_1.clone(),
                    p.config_2.clone(),
                    fmt10(p.mean_diff),
                    fmt10(p.bayes.p_left),
                    fmt10(p.bayes.p_rope),
                    fmt10(p.bayes.p_right),
                    p.n_seeds.to_string(),
                ]
            })
            .collect(),
    };
    bayes.write(dir, "bayes_rope", &mut paths)?;

    let wilcoxon = Table {
        header: [
            "config_1",
            "config_2",
            "mean_diff",
            "p_value",
            "mean_1",
            "mean_2",
            "n_seeds",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        rows: set
            .pairs
            .iter()
            .map(|p| {
                vec![
                    p.config_1.clone(),
                    p.config_2.clone(),
                    fmt10(p.mean_diff),
                    fmt10(p.wilcoxon_p),
                    fmt10(p.mean_1),
                    fmt10(p.mean_2),
                    p.n_seeds.to_string(),
                ]
            })
            .collect(),
    };
    wilcoxon.write(dir, "wilcoxon", &mut paths)?;

    let permutation = Table {
        header: [
            "config_1",
            "config_2",
            "mean_1",
            "mean_2",
            "p_value",
            "statistic",
            "n_seeds",
            "p_value_corrected",
            "significant",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        rows: set
            .pairs
            .iter()
            .map(|p| {
                let significant = p.permutation_p_corrected.to_f64_lossy() < SIGNIFICANCE_LEVEL;
                vec![
                    p.config_1.clone(),
                    p.config_2.clone(),
                    fmt10(p.mean_1),
                    fmt10(p.mean_2),
                    fmt10(p.permutation.p_value),
                    fmt10(p.permutation.statistic),
                    p.n_seeds.to_string(),
                    fmt10(p.permutation_p_corrected),
                    if significant {
                        "TRUE".into()
                    } else {
                        "FALSE".into()
                    },
                ]
            })
            .collect(),
    };
    permutation.write(dir, "permutation", &mut paths)?;

    Ok(paths)
}
