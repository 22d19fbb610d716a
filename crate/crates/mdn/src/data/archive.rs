//! On-disk trial archives.
//!
//! An archive is a directory holding `manifest.json` and `signals.bin`. The
//! manifest carries the shared shape and per-record metadata:
//!
//! ```json
//! {"channels": C, "timepoints": T, "n_classes": K,
//!  "records": [{"label": 0, "subject": "s01", "session": null}, ...]}
//! ```
//!
//! `signals.bin` holds the records in manifest order, each as C*T little-endian
//! 32-bit floats, row-major (channel-major).

use super::trial::{common_shape, LabeledTrial};
use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    channels: usize,
    timepoints: usize,
    n_classes: usize,
    records: Vec<Record>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    label: usize,
    subject: String,
    session: Option<String>,
}

/// Write `trials` into the directory `path` (created if missing).
///
/// An empty trial list is a valid archive with zero records; the shared shape
/// is then recorded as 0x0.
pub fn save_archive<S: Scalar>(trials: &[LabeledTrial<S>], path: &Path) -> Result<()> {
    let (channels, timepoints) = if trials.is_empty() {
        (0, 0)
    } else {
        common_shape(trials)?
    };
    let n_classes = trials.iter().map(|t| t.label + 1).max().unwrap_or(0);
    let manifest = Manifest {
        channels,
        timepoints,
        n_classes,
        records: trials
            .iter()
            .map(|t| Record {
                label: t.label,
                subject: t.subject_id.clone(),
                session: t.session_id.clone(),
            })
            .collect(),
    };
    fs::create_dir_all(path)?;
    fs::write(
        path.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;

    let mut payload = Vec::with_capacity(trials.len() * channels * timepoints * 4);
    for t in trials {
        for row in t.signal.rows() {
            for &v in row {
                payload.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
    }
    let mut file = fs::File::create(path.join("signals.bin"))?;
    file.write_all(&payload)?;
    Ok(())
}

/// Read an archive written by `save_archive`.
pub fn load_archive<S: Scalar>(path: &Path) -> Result<Vec<LabeledTrial<S>>> {
    let manifest_path = path.join("manifest.json");
    let manifest_bytes = fs::read(&manifest_path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Format(format!("malformed manifest: {e}")))?;

    let mut payload = Vec::new();
    fs::File::open(path.join("signals.bin"))?.read_to_end(&mut payload)?;

    let cells = manifest.channels * manifest.timepoints;
    let expected = manifest.records.len() * cells * 4;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "signals.bin holds {} bytes but manifest ({} records of {}x{}) requires {}",
            payload.len(),
            manifest.records.len(),
            manifest.channels,
            manifest.timepoints,
            expected
        )));
    }

    let mut trials = Vec::with_capacity(manifest.records.len());
    for (i, record) in manifest.records.iter().enumerate() {
        if manifest.n_classes > 0 && record.label >= manifest.n_classes {
            return Err(Error::Format(format!(
                "record {i}: label {} out of range for n_classes {}",
                record.label, manifest.n_classes
            )));
        }
        let start = i * cells * 4;
        let mut signal = Array2::<S>::zeros((manifest.channels, manifest.timepoints));
        for (flat, value) in signal.iter_mut().enumerate() {
            let off = start + flat * 4;
            let bits: [u8; 4] = payload[off..off + 4].try_into().unwrap();
            *value = s::<S>(f32::from_le_bytes(bits) as f64);
        }
        trials.push(LabeledTrial::new(
            signal,
            record.label,
            manifest.n_classes.max(record.label + 1),
            record.subject.clone(),
            record.session.clone(),
        )?);
    }
    Ok(trials)
}
