//! Pairwise win-loss matrix over configurations and per-config summaries.

use super::effect::PairedSamples;
use super::evidence::{assess_evidence, EvidenceLevel};
use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use std::collections::BTreeMap;

/// 0/1 superiority indicator matrix over configurations.
///
/// `entries[i][j] == 1` iff configuration `i` shows evidence of superiority
/// over configuration `j`. The diagonal is zero and `W_ij`, `W_ji` are never
/// both set.
#[derive(Debug, Clone)]
pub struct WinLossMatrix {
    pub configs: Vec<String>,
    pub entries: Vec<Vec<u8>>,
}

impl WinLossMatrix {
    pub fn wins(&self, i: usize) -> usize {
        self.entries[i].iter().map(|&v| v as usize).sum()
    }

    pub fn losses(&self, i: usize) -> usize {
        self.entries.iter().map(|row| row[i] as usize).sum()
    }
}

/// `WinRate_i = sum_j W_ij / sum_j (W_ij + W_ji)`, undefined for a config with
/// no decisive comparisons.
pub fn win_rate<S: Scalar>(matrix: &WinLossMatrix, i: usize) -> Option<S> {
    let wins = matrix.wins(i);
    let total = wins + matrix.losses(i);
    if total == 0 {
        None
    } else {
        Some(s::<S>(wins as f64) / s::<S>(total as f64))
    }
}

/// Per-config rollup of the win matrix in the shape of the report tables.
#[derive(Debug, Clone)]
pub struct ConfigSummary<S: Scalar> {
    pub config: String,
    pub wins: usize,
    pub losses: usize,
    pub total: usize,
    /// Blank when the config was never part of a decisive comparison.
    pub rate: Option<S>,
    pub win_list: Vec<String>,
    pub loss_list: Vec<String>,
    /// Evidence levels of this config's wins, tallied; sorted by count
    /// descending, then stronger level first.
    pub evidence_tally: Vec<(EvidenceLevel, usize)>,
}

/// Win matrix plus summaries for one (metric, split) analysis.
#[derive(Debug, Clone)]
pub struct WinAnalysis<S: Scalar> {
    pub matrix: WinLossMatrix,
    pub summaries: Vec<ConfigSummary<S>>,
    /// Evidence level for each ordered winning pair (winner, loser).
    pub evidence: BTreeMap<(String, String), EvidenceLevel>,
}

/// Check that every config carries the same seed count; offenders are listed.
pub fn check_aligned<S: Scalar>(samples: &BTreeMap<String, Vec<S>>) -> Result<()> {
    let mut counts: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (name, vals) in samples {
        counts.entry(vals.len()).or_default().push(name);
    }
    if counts.len() > 1 {
        let detail = counts
            .iter()
            .map(|(n, names)| format!("{} seeds: {}", n, names.join(", ")))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Config(format!(
            "configurations have mismatched seed sets ({detail})"
        )));
    }
    Ok(())
}

/// Run `assess_evidence` over every ordered config pair.
///
/// `samples` maps config name to seed-aligned metric values (same seed order
/// for every config).
pub fn build_win_matrix<S: Scalar>(samples: &BTreeMap<String, Vec<S>>) -> Result<WinAnalysis<S>> {
    check_aligned(samples)?;
    let configs: Vec<String> = samples.keys().cloned().collect();
    let k = configs.len();
    let mut entries = vec![vec![0u8; k]; k];
    let mut evidence = BTreeMap::new();

    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let pair =
                PairedSamples::new(samples[&configs[i]].clone(), samples[&configs[j]].clone())?;
            if let Some(level) = assess_evidence(&pair)? {
                entries[i][j] = 1;
                evidence.insert((configs[i].clone(), configs[j].clone()), level);
            }
        }
    }

    let matrix = WinLossMatrix {
        configs: configs.clone(),
        entries,
    };
    let summaries = configs
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let win_list: Vec<String> = configs
                .iter()
                .enumerate()
                .filter(|&(j, _)| matrix.entries[i][j] == 1)
                .map(|(_, c)| c.clone())
                .collect();
            let loss_list: Vec<String> = configs
                .iter()
                .enumerate()
                .filter(|&(j, _)| matrix.entries[j][i] == 1)
                .map(|(_, c)| c.clone())
                .collect();
            let mut tally: BTreeMap<EvidenceLevel, usize> = BTreeMap::new();
            for loser in &win_list {
                let level = evidence[&(name.clone(), loser.clone())];
                *tally.entry(level).or_insert(0) += 1;
            }
            let mut evidence_tally: Vec<(EvidenceLevel, usize)> = tally.into_iter().collect();
            evidence_tally.sort_by(|a, b| b.1.cmp(&a.1).then(b.0.cmp(&a.0)));
            let wins = win_list.len();
            let losses = loss_list.len();
            ConfigSummary {
                config: name.clone(),
                wins,
                losses,
                total: wins + losses,
                rate: win_rate(&matrix, i),
                win_list,
                loss_list,
                evidence_tally,
            }
        })
        .collect();

    Ok(WinAnalysis {
        matrix,
        summaries,
        evidence,
    })
}
