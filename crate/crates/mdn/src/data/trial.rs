//! A single labeled trial: one channels-by-timepoints signal window.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::Array2;

/// One signal window with its class label and provenance identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrial<S: Scalar> {
    /// `[channels, timepoints]`, all finite.
    pub signal: Array2<S>,
    /// Class index in `0..n_classes`.
    pub label: usize,
    pub subject_id: String,
    /// Recording session; `None` when session metadata does not exist.
    pub session_id: Option<String>,
}

impl<S: Scalar> LabeledTrial<S> {
    pub fn new(
        signal: Array2<S>,
        label: usize,
        n_classes: usize,
        subject_id: impl Into<String>,
        session_id: Option<String>,
    ) -> Result<Self> {
        if label >= n_classes {
            return Err(Error::Format(format!(
                "label {label} out of range for {n_classes} classes"
            )));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(
                "trial signal contains non-finite values".into(),
            ));
        }
        Ok(Self {
            signal,
            label,
            subject_id: subject_id.into(),
            session_id,
        })
    }

    pub fn channels(&self) -> usize {
        self.signal.nrows()
    }

    pub fn timepoints(&self) -> usize {
        self.signal.ncols()
    }

    /// Widen/narrow the scalar type (f32 -> f64 is exact).
    pub fn cast<T: Scalar>(&self) -> LabeledTrial<T> {
        LabeledTrial {
            signal: self.signal.mapv(|v| T::from_f64_lossy(v.to_f64_lossy())),
            label: self.label,
            subject_id: self.subject_id.clone(),
            session_id: self.session_id.clone(),
        }
    }
}

/// Validate that every trial in a set shares the same shape; returns (C, T).
pub fn common_shape<S: Scalar>(trials: &[LabeledTrial<S>]) -> Result<(usize, usize)> {
    let first = trials
        .first()
        .ok_or_else(|| Error::Dimension("empty trial list".into()))?;
    let shape = (first.channels(), first.timepoints());
    for (i, t) in trials.iter().enumerate() {
        if (t.channels(), t.timepoints()) != shape {
            return Err(Error::Dimension(format!(
                "trial {i} has shape {}x{}, expected {}x{}",
                t.channels(),
                t.timepoints(),
                shape.0,
                shape.1
            )));
        }
    }
    Ok(shape)
}
