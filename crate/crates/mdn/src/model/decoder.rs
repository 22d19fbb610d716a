//! Lightweight signal decoder with configurable inputs.
//!
//! Reconstruction is an additive sum of learned contributions: the latent
//! enters through an expansion back to `[C, T]`, the raw and denoised signals
//! through channel-mixing matrices, and the encoder's multi-scale features
//! through per-scale projections after nearest-neighbor upsampling. Inputs
//! that are switched off never enter the computation.

use super::encoder::{EncoderConfig, MultiScaleFeatures};
use crate::error::{Error, Result};
use crate::nn::{kernels, Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which tensors feed the decoder. At least one flag must be set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderInputSpec {
    #[serde(default)]
    pub use_z: bool,
    #[serde(default)]
    pub use_x: bool,
    #[serde(default)]
    pub use_x_hat: bool,
    #[serde(default)]
    pub use_skips: bool,
}

impl DecoderInputSpec {
    pub fn z_only() -> Self {
        Self {
            use_z: true,
            use_x: false,
            use_x_hat: false,
            use_skips: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.use_z || self.use_x || self.use_x_hat || self.use_skips) {
            return Err(Error::Config(
                "decoder input spec must enable at least one source".into(),
            ));
        }
        Ok(())
    }

    /// The nine studied combinations: every non-empty subset that appears in
    /// the ablation grid.
    pub fn all_studied() -> Vec<(&'static str, Self)> {
        let make = |z, x, xh, sk| Self {
            use_z: z,
            use_x: x,
            use_x_hat: xh,
            use_skips: sk,
        };
        vec![
            ("x + x_hat + skips", make(false, true, true, true)),
            ("x + x_hat", make(false, true, true, false)),
            ("x + skips", make(false, true, false, true)),
            ("x_hat + skips", make(false, false, true, true)),
            ("skips", make(false, false, false, true)),
            ("z only", make(true, false, false, false)),
            ("z + x", make(true, true, false, false)),
            ("z + x_hat", make(true, false, true, false)),
            ("z + skips", make(true, false, false, true)),
        ]
    }
}

/// Everything the decoder may consume for one trial.
pub struct DecoderInputs<'a, S: Scalar> {
    pub z: Option<&'a Array1<S>>,
    pub x: Option<&'a Array2<S>>,
    pub x_hat: Option<&'a Array2<S>>,
    pub skips: Option<&'a MultiScaleFeatures<S>>,
}

pub struct DecoderInputVars {
    pub z: Option<Var>,
    pub x: Option<Var>,
    pub x_hat: Option<Var>,
    pub skips: Option<(Var, Var, Var)>,
}

pub struct Decoder {
    pub channels: usize,
    pub timepoints: usize,
    pub latent_dim: usize,
    z_w: ParamId,
    x_w: ParamId,
    xh_w: ParamId,
    skip_w1: ParamId,
    skip_w2: ParamId,
    skip_w3: ParamId,
    out_b: ParamId,
}

impl Decoder {
    pub fn new<S: Scalar>(
        encoder: &EncoderConfig,
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let c = encoder.channels;
        let t = encoder.timepoints;
        let d = encoder.latent_dim;
        let z_w = store.register_glorot("decoder.z.w", ParamGroup::Decoder, c * t, d, rng);
        let x_w = store.register_glorot("decoder.x.w", ParamGroup::Decoder, c, c, rng);
        let xh_w = store.register_glorot("decoder.xh.w", ParamGroup::Decoder, c, c, rng);
        let skip_w1 = store.register_glorot(
            "decoder.skip1.w",
            ParamGroup::Decoder,
            c,
            encoder.block1_channels(),
            rng,
        );
        let skip_w2 = store.register_glorot(
            "decoder.skip2.w",
            ParamGroup::Decoder,
            c,
            encoder.block2_features,
            rng,
        );
        let skip_w3 = store.register_glorot("decoder.skip3.w", ParamGroup::Decoder, c, d, rng);
        let out_b = store.register_zeros("decoder.out.b", ParamGroup::Decoder, c, 1);
        Self {
            channels: c,
            timepoints: t,
            latent_dim: d,
            z_w,
            x_w,
            xh_w,
            skip_w1,
            skip_w2,
            skip_w3,
            out_b,
        }
    }

    /// Make the raw-signal path an exact identity (`x_w = I`, bias 0); useful
    /// for pass-through checks with `spec = x only`.
    pub fn init_passthrough_x<S: Scalar>(&self, store: &mut ParamStore<S>) {
        store.set_value(self.x_w, Array2::eye(self.channels));
        store.set_value(self.out_b, Array2::zeros((self.channels, 1)));
    }

    fn require<'a, T>(input: Option<&'a T>, name: &str) -> Result<&'a T> {
        input.ok_or_else(|| Error::Config(format!("decoder input '{name}' is enabled but missing")))
    }

    /// Reconstruct one trial from the flagged inputs.
    pub fn decode<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        spec: &DecoderInputSpec,
        inputs: DecoderInputs<'_, S>,
    ) -> Result<Array2<S>> {
        spec.validate()?;
        let shape = (self.channels, self.timepoints);
        let mut out = store.value(self.out_b).broadcast(shape).unwrap().to_owned();
        if spec.use_z {
            let z = Self::require(inputs.z, "z")?;
            if z.len() != self.latent_dim {
                return Err(Error::Dimension(format!(
                    "latent length {} does not match decoder {}",
                    z.len(),
                    self.latent_dim
                )));
            }
            let col = z.clone().insert_axis(Axis(1));
            let expanded = store.value(self.z_w).dot(&col);
            let reshaped =
                Array2::from_shape_vec(shape, expanded.iter().copied().collect()).unwrap();
            out += &reshaped;
        }
        if spec.use_x {
            let x = Self::require(inputs.x, "x")?;
            if x.dim() != shape {
                return Err(Error::Dimension("decoder x input has wrong shape".into()));
            }
            out += &store.value(self.x_w).dot(x);
        }
        if spec.use_x_hat {
            let xh = Self::require(inputs.x_hat, "x_hat")?;
            if xh.dim() != shape {
                return Err(Error::Dimension(
                    "decoder x_hat input has wrong shape".into(),
                ));
            }
            out += &store.value(self.xh_w).dot(xh);
        }
        if spec.use_skips {
            let skips = Self::require(inputs.skips, "skips")?;
            for (w, feat) in [
                (self.skip_w1, &skips.dn1),
                (self.skip_w2, &skips.dn2),
                (self.skip_w3, &skips.dn3),
            ] {
                let up = kernels::repeat_cols_to(feat, self.timepoints);
                out += &store.value(w).dot(&up);
            }
        }
        Ok(out)
    }

    /// Tape version over graph nodes.
    pub fn decode_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        spec: &DecoderInputSpec,
        inputs: &DecoderInputVars,
    ) -> Result<Var> {
        spec.validate()?;
        let bias = g.param(store, self.out_b);
        let zero = g.constant(Array2::zeros((self.channels, self.timepoints)));
        let mut out = g.add_colvec(zero, bias);
        if spec.use_z {
            let z = inputs
                .z
                .ok_or_else(|| Error::Config("decoder input 'z' is enabled but missing".into()))?;
            let w = g.param(store, self.z_w);
            let expanded = g.matmul(w, z);
            let reshaped = g.reshape(expanded, self.channels, self.timepoints);
            out = g.add(out, reshaped);
        }
        if spec.use_x {
            let x = inputs
                .x
                .ok_or_else(|| Error::Config("decoder input 'x' is enabled but missing".into()))?;
            let w = g.param(store, self.x_w);
            let mixed = g.matmul(w, x);
            out = g.add(out, mixed);
        }
        if spec.use_x_hat {
            let xh = inputs.x_hat.ok_or_else(|| {
                Error::Config("decoder input 'x_hat' is enabled but missing".into())
            })?;
            let w = g.param(store, self.xh_w);
            let mixed = g.matmul(w, xh);
            out = g.add(out, mixed);
        }
        if spec.use_skips {
            let (dn1, dn2, dn3) = inputs.skips.ok_or_else(|| {
                Error::Config("decoder input 'skips' is enabled but missing".into())
            })?;
            for (w_id, feat) in [
                (self.skip_w1, dn1),
                (self.skip_w2, dn2),
                (self.skip_w3, dn3),
            ] {
                let up = g.repeat_cols_to(feat, self.timepoints);
                let w = g.param(store, w_id);
                let mixed = g.matmul(w, up);
                out = g.add(out, mixed);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::encoder::Encoder;
    use rand::{Rng, SeedableRng};

    fn setup() -> (EncoderConfig, Encoder, Decoder, ParamStore<f64>) {
        let config = EncoderConfig {
            channels: 3,
            timepoints: 16,
            temporal_kernel: 5,
            depth_multiplier: 2,
            block2_features: 4,
            sep_kernel: 3,
            latent_dim: 6,
            proj_dim: 4,
            pool1: 2,
            pool2: 2,
            pool3: 2,
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let encoder = Encoder::new(config.clone(), &mut store, &mut rng).unwrap();
        let decoder = Decoder::new(&config, &mut store, &mut rng);
        (config, encoder, decoder, store)
    }

    fn random_inputs(seed: u64) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((3, 16), |_| rng.gen_range(-1.0..1.0));
        let xh = Array2::from_shape_fn((3, 16), |_| rng.gen_range(-1.0..1.0));
        let z = Array1::from_shape_fn(6, |_| rng.gen_range(-1.0..1.0));
        (x, xh, z)
    }

    #[test]
    fn all_flags_false_is_a_config_error() {
        let (_, _, decoder, store) = setup();
        let spec = DecoderInputSpec {
            use_z: false,
            use_x: false,
            use_x_hat: false,
            use_skips: false,
        };
        let err = decoder
            .decode(
                &store,
                &spec,
                DecoderInputs {
                    z: None,
                    x: None,
                    x_hat: None,
                    skips: None,
                },
            )
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn missing_flagged_input_is_a_config_error() {
        let (_, _, decoder, store) = setup();
        let err = decoder
            .decode(
                &store,
                &DecoderInputSpec::z_only(),
                DecoderInputs {
                    z: None,
                    x: None,
                    x_hat: None,
                    skips: None,
                },
            )
            .unwrap_err();
        assert!(err.to_string().contains("'z'"));
    }

    #[test]
    fn unused_inputs_cannot_affect_the_output() {
        let (_, encoder, decoder, store) = setup();
        let (x, xh, z) = random_inputs(2);
        let skips = encoder.encode(&store, &x).unwrap();
        let (x2, xh2, z2) = random_inputs(99);
        let skips2 = encoder.encode(&store, &x2).unwrap();

        for (name, spec) in DecoderInputSpec::all_studied() {
            let base = decoder
                .decode(
                    &store,
                    &spec,
                    DecoderInputs {
                        z: Some(&z),
                        x: Some(&x),
                        x_hat: Some(&xh),
                        skips: Some(&skips),
                    },
                )
                .unwrap();
            // Perturb every unflagged input; flagged ones stay fixed.
            let perturbed = decoder
                .decode(
                    &store,
                    &spec,
                    DecoderInputs {
                        z: Some(if spec.use_z { &z } else { &z2 }),
                        x: Some(if spec.use_x { &x } else { &x2 }),
                        x_hat: Some(if spec.use_x_hat { &xh } else { &xh2 }),
                        skips: Some(if spec.use_skips { &skips } else { &skips2 }),
                    },
                )
                .unwrap();
            for (a, b) in base.iter().zip(perturbed.iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "combination {name} leaked");
            }
        }
    }

    #[test]
    fn passthrough_init_reproduces_x() {
        let (_, _, decoder, mut store) = setup();
        decoder.init_passthrough_x(&mut store);
        let (x, _, _) = random_inputs(3);
        let spec = DecoderInputSpec {
            use_z: false,
            use_x: true,
            use_x_hat: false,
            use_skips: false,
        };
        let out = decoder
            .decode(
                &store,
                &spec,
                DecoderInputs {
                    z: None,
                    x: Some(&x),
                    x_hat: None,
                    skips: None,
                },
            )
            .unwrap();
        for (a, b) in out.iter().zip(x.iter()) {
            approx::assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn graph_path_matches_plain_and_gradients_check() {
        let (_, encoder, decoder, mut store) = setup();
        let (x, xh, z) = random_inputs(4);
        let skips = encoder.encode(&store, &x).unwrap();
        let spec = DecoderInputSpec {
            use_z: true,
            use_x: true,
            use_x_hat: true,
            use_skips: true,
        };
        let plain = decoder
            .decode(
                &store,
                &spec,
                DecoderInputs {
                    z: Some(&z),
                    x: Some(&x),
                    x_hat: Some(&xh),
                    skips: Some(&skips),
                },
            )
            .unwrap();

        let mut g = Graph::new();
        let zv = g.constant(z.clone().insert_axis(Axis(1)));
        let xv = g.constant(x.clone());
        let xhv = g.constant(xh.clone());
        let s1 = g.constant(skips.dn1.clone());
        let s2 = g.constant(skips.dn2.clone());
        let s3 = g.constant(skips.dn3.clone());
        let out = decoder
            .decode_graph(
                &mut g,
                &store,
                &spec,
                &DecoderInputVars {
                    z: Some(zv),
                    x: Some(xv),
                    x_hat: Some(xhv),
                    skips: Some((s1, s2, s3)),
                },
            )
            .unwrap();
        for (a, b) in plain.iter().zip(g.value(out).iter()) {
            approx::assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }

        let probe = Array2::from_shape_fn((3, 16), |(i, j)| ((i + j) % 3) as f64 - 1.0);
        let params = [
            decoder.z_w,
            decoder.x_w,
            decoder.xh_w,
            decoder.skip_w1,
            decoder.skip_w2,
            decoder.skip_w3,
            decoder.out_b,
        ];
        crate::nn::gradcheck::check_loss_grads(
            &mut store,
            &params,
            |g, st| {
                let zv = g.constant(z.clone().insert_axis(Axis(1)));
                let xv = g.constant(x.clone());
                let xhv = g.constant(xh.clone());
                let s1 = g.constant(skips.dn1.clone());
                let s2 = g.constant(skips.dn2.clone());
                let s3 = g.constant(skips.dn3.clone());
                let out = decoder
                    .decode_graph(
                        g,
                        st,
                        &spec,
                        &DecoderInputVars {
                            z: Some(zv),
                            x: Some(xv),
                            x_hat: Some(xhv),
                            skips: Some((s1, s2, s3)),
                        },
                    )
                    .unwrap();
                g.weighted_sum_const(out, probe.clone())
            },
            1e-6,
            1e-4,
        );
    }
}
