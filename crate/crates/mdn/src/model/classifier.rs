//! Classification heads over configurable model outputs.
//!
//! A plain fully connected head works on the latent or any flattened signal;
//! a small convolutional head (depthwise temporal conv, pointwise mix,
//! pooling, global average) works on signal-shaped inputs only.

use crate::error::{Error, Result};
use crate::nn::{kernels, Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::scalar::{s, Scalar};
use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierHead {
    Fc,
    EegnetStyle,
}

/// Which model output feeds the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierInput {
    X,
    XHat,
    DecoderOut,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub head: ClassifierHead,
    pub input: ClassifierInput,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            head: ClassifierHead::Fc,
            input: ClassifierInput::Z,
        }
    }
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<()> {
        if self.head == ClassifierHead::EegnetStyle && self.input == ClassifierInput::Z {
            return Err(Error::Config(
                "a latent vector cannot feed the convolutional head; use head = fc with input = z"
                    .into(),
            ));
        }
        Ok(())
    }

    /// The seven studied head/input combinations.
    pub fn all_studied() -> Vec<(&'static str, Self)> {
        use ClassifierHead::*;
        use ClassifierInput::*;
        vec![
            (
                "eegnet_classifier__x",
                Self {
                    head: EegnetStyle,
                    input: X,
                },
            ),
            (
                "eegnet_classifier__x_hat",
                Self {
                    head: EegnetStyle,
                    input: XHat,
                },
            ),
            (
                "eegnet_classifier__decoder_out",
                Self {
                    head: EegnetStyle,
                    input: DecoderOut,
                },
            ),
            ("fc_classifier__x", Self { head: Fc, input: X }),
            (
                "fc_classifier__x_hat",
                Self {
                    head: Fc,
                    input: XHat,
                },
            ),
            (
                "fc_classifier__decoder_out",
                Self {
                    head: Fc,
                    input: DecoderOut,
                },
            ),
            ("fc_classifier__z", Self { head: Fc, input: Z }),
        ]
    }
}

enum HeadParams {
    Fc {
        w: ParamId,
        b: ParamId,
    },
    Conv {
        e1_w: ParamId,
        e1_b: ParamId,
        e2_w: ParamId,
        e2_b: ParamId,
        out_w: ParamId,
        out_b: ParamId,
        pool: usize,
    },
}

pub struct Classifier {
    pub spec: ClassifierSpec,
    pub n_classes: usize,
    channels: usize,
    timepoints: usize,
    latent_dim: usize,
    params: HeadParams,
}

impl Classifier {
    pub fn new<S: Scalar>(
        spec: ClassifierSpec,
        channels: usize,
        timepoints: usize,
        latent_dim: usize,
        n_classes: usize,
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let params = match spec.head {
            ClassifierHead::Fc => {
                let in_dim = if spec.input == ClassifierInput::Z {
                    latent_dim
                } else {
                    channels * timepoints
                };
                HeadParams::Fc {
                    w: store.register_glorot(
                        "classifier.fc.w",
                        ParamGroup::Classifier,
                        n_classes,
                        in_dim,
                        rng,
                    ),
                    b: store.register_zeros(
                        "classifier.fc.b",
                        ParamGroup::Classifier,
                        n_classes,
                        1,
                    ),
                }
            }
            ClassifierHead::EegnetStyle => {
                let mult = 2;
                let features = 2 * channels;
                let kernel = (timepoints / 4).max(3);
                let pool = 4.min(timepoints);
                HeadParams::Conv {
                    e1_w: store.register_glorot(
                        "classifier.conv.e1.w",
                        ParamGroup::Classifier,
                        channels * mult,
                        kernel,
                        rng,
                    ),
                    e1_b: store.register_zeros(
                        "classifier.conv.e1.b",
                        ParamGroup::Classifier,
                        channels * mult,
                        1,
                    ),
                    e2_w: store.register_glorot(
                        "classifier.conv.e2.w",
                        ParamGroup::Classifier,
                        features,
                        channels * mult,
                        rng,
                    ),
                    e2_b: store.register_zeros(
                        "classifier.conv.e2.b",
                        ParamGroup::Classifier,
                        features,
                        1,
                    ),
                    out_w: store.register_glorot(
                        "classifier.conv.out.w",
                        ParamGroup::Classifier,
                        n_classes,
                        features,
                        rng,
                    ),
                    out_b: store.register_zeros(
                        "classifier.conv.out.b",
                        ParamGroup::Classifier,
                        n_classes,
                        1,
                    ),
                    pool,
                }
            }
        };
        Ok(Self {
            spec,
            n_classes,
            channels,
            timepoints,
            latent_dim,
            params,
        })
    }

    fn check_signal<S: Scalar>(&self, x: &Array2<S>) -> Result<()> {
        if x.dim() != (self.channels, self.timepoints) {
            return Err(Error::Dimension(format!(
                "classifier signal input shape {:?}, expected ({}, {})",
                x.dim(),
                self.channels,
                self.timepoints
            )));
        }
        Ok(())
    }

    /// Logits for a signal-shaped input, routed by the configured head.
    pub fn classify_signal<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        signal: &Array2<S>,
    ) -> Result<Array1<S>> {
        if self.spec.input == ClassifierInput::Z {
            return Err(Error::Config(
                "classifier is configured for latent input, not a signal".into(),
            ));
        }
        self.check_signal(signal)?;
        match &self.params {
            HeadParams::Fc { w, b } => {
                let flat: Array2<S> = Array2::from_shape_vec(
                    (self.channels * self.timepoints, 1),
                    signal.iter().copied().collect(),
                )
                .unwrap();
                let logits = store.value(*w).dot(&flat) + store.value(*b);
                Ok(logits.index_axis(Axis(1), 0).to_owned())
            }
            HeadParams::Conv {
                e1_w,
                e1_b,
                e2_w,
                e2_b,
                out_w,
                out_b,
                pool,
            } => {
                let conv = kernels::conv_time_depthwise(signal, store.value(*e1_w), 2);
                let conv = &conv + &store.value(*e1_b).broadcast(conv.dim()).unwrap();
                let act = kernels::elu(&conv);
                let pooled = kernels::avgpool_cols(&act, *pool);
                let mixed = store.value(*e2_w).dot(&pooled);
                let mixed = &mixed + &store.value(*e2_b).broadcast(mixed.dim()).unwrap();
                let act = kernels::elu(&mixed);
                let n_t = act.ncols();
                let global = act.sum_axis(Axis(1)).mapv(|v| v / s::<S>(n_t as f64));
                let logits =
                    store.value(*out_w).dot(&global.insert_axis(Axis(1))) + store.value(*out_b);
                Ok(logits.index_axis(Axis(1), 0).to_owned())
            }
        }
    }

    /// Logits for a latent input (fc head with `input = z` only).
    pub fn classify_latent<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        z: &Array1<S>,
    ) -> Result<Array1<S>> {
        if self.spec.input != ClassifierInput::Z {
            return Err(Error::Config(
                "classifier is configured for signal input, not a latent".into(),
            ));
        }
        if z.len() != self.latent_dim {
            return Err(Error::Dimension(format!(
                "latent length {} does not match classifier {}",
                z.len(),
                self.latent_dim
            )));
        }
        match &self.params {
            HeadParams::Fc { w, b } => {
                let col = z.clone().insert_axis(Axis(1));
                let logits = store.value(*w).dot(&col) + store.value(*b);
                Ok(logits.index_axis(Axis(1), 0).to_owned())
            }
            HeadParams::Conv { .. } => unreachable!("validated at construction"),
        }
    }

    /// Tape version; `input` is a `[C, T]` node or `[D, 1]` latent column.
    /// Returns a `[K, 1]` logit column.
    pub fn classify_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        input: Var,
    ) -> Var {
        match &self.params {
            HeadParams::Fc { w, b } => {
                let flat_len = g.value(input).len();
                let flat = g.reshape(input, flat_len, 1);
                let wv = g.param(store, *w);
                let bv = g.param(store, *b);
                let logits = g.matmul(wv, flat);
                g.add_colvec(logits, bv)
            }
            HeadParams::Conv {
                e1_w,
                e1_b,
                e2_w,
                e2_b,
                out_w,
                out_b,
                pool,
            } => {
                let w1 = g.param(store, *e1_w);
                let b1 = g.param(store, *e1_b);
                let conv = g.conv_time_depthwise(input, w1, 2);
                let conv = g.add_colvec(conv, b1);
                let act = g.elu(conv);
                let pooled = g.avgpool_cols(act, *pool);
                let w2 = g.param(store, *e2_w);
                let b2 = g.param(store, *e2_b);
                let mixed = g.matmul(w2, pooled);
                let mixed = g.add_colvec(mixed, b2);
                let act = g.elu(mixed);
                let n_t = g.value(act).ncols();
                let ones = g.constant(Array2::from_elem((n_t, 1), S::one() / s::<S>(n_t as f64)));
                let global = g.matmul(act, ones);
                let wo = g.param(store, *out_w);
                let bo = g.param(store, *out_b);
                let logits = g.matmul(wo, global);
                g.add_colvec(logits, bo)
            }
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match &self.params {
            HeadParams::Fc { w, b } => vec![*w, *b],
            HeadParams::Conv {
                e1_w,
                e1_b,
                e2_w,
                e2_b,
                out_w,
                out_b,
                ..
            } => vec![*e1_w, *e1_b, *e2_w, *e2_b, *out_w, *out_b],
        }
    }
}
