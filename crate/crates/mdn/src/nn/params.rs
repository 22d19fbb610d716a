//! Named parameter storage with grouped Adam updates.

use crate::scalar::{s, Scalar};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Which optimizer/freezing group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Pool,
    Projection,
    Decoder,
    Classifier,
    Ddpm,
}

impl ParamGroup {
    /// Groups updated by the main objective (everything except the DDPM,
    /// which has its own loss and optimizer).
    pub fn in_main(self) -> bool {
        !matches!(self, ParamGroup::Ddpm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

struct Entry<S: Scalar> {
    name: String,
    group: ParamGroup,
    value: Array2<S>,
    adam_m: Array2<S>,
    adam_v: Array2<S>,
    steps: usize,
}

/// All learnable tensors of a model, in registration order.
pub struct ParamStore<S: Scalar> {
    entries: Vec<Entry<S>>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn register(&mut self, name: &str, group: ParamGroup, value: Array2<S>) -> ParamId {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let (m, v) = (Array2::zeros(value.dim()), Array2::zeros(value.dim()));
        self.entries.push(Entry {
            name: name.to_string(),
            group,
            value,
            adam_m: m,
            adam_v: v,
            steps: 0,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Uniform init in `[-limit, limit]` with `limit = sqrt(6/(fan_in+fan_out))`.
    pub fn register_glorot(
        &mut self,
        name: &str,
        group: ParamGroup,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| s::<S>(rng.gen_range(-limit..limit)));
        self.register(name, group, value)
    }

    pub fn register_zeros(
        &mut self,
        name: &str,
        group: ParamGroup,
        rows: usize,
        cols: usize,
    ) -> ParamId {
        self.register(name, group, Array2::zeros((rows, cols)))
    }

    pub fn value(&self, id: ParamId) -> &Array2<S> {
        &self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Array2<S>) {
        assert_eq!(self.entries[id.0].value.dim(), value.dim());
        self.entries[id.0].value = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id.0].group
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Apply one Adam step to every listed gradient whose group passes the
    /// filter. Bias correction uses a per-parameter step counter so frozen
    /// phases do not skew later updates.
    pub fn adam_step(
        &mut self,
        grads: &[(ParamId, Array2<S>)],
        lr: S,
        include: impl Fn(ParamGroup) -> bool,
    ) {
        let b1 = s::<S>(ADAM_BETA1);
        let b2 = s::<S>(ADAM_BETA2);
        let eps = s::<S>(ADAM_EPS);
        for (id, grad) in grads {
            let entry = &mut self.entries[id.0];
            if !include(entry.group) {
                continue;
            }
            entry.steps += 1;
            let t = s::<S>(entry.steps as f64);
            entry.adam_m = entry.adam_m.mapv(|m| m * b1) + &grad.mapv(|g| g * (S::one() - b1));
            entry.adam_v = entry.adam_v.mapv(|v| v * b2) + &grad.mapv(|g| g * g * (S::one() - b2));
            let mc = S::one() - b1.powf(t);
            let vc = S::one() - b2.powf(t);
            let update = Array2::from_shape_fn(entry.value.dim(), |ij| {
                let mhat = entry.adam_m[ij] / mc;
                let vhat = entry.adam_v[ij] / vc;
                lr * mhat / (vhat.sqrt() + eps)
            });
            entry.value -= &update;
        }
    }

    /// Stable snapshot of (name, value) pairs in registration order.
    pub fn snapshot(&self) -> Vec<(String, Array2<S>)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.value.clone()))
            .collect()
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}
