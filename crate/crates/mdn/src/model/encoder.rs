//! Compact convolutional encoder with attention pooling.
//!
//! Three blocks extract multi-scale features from a `[C, T]` trial: a
//! depthwise temporal convolution, a pointwise spatial mix across channels,
//! and a separable (depthwise temporal then pointwise) convolution. Each
//! block ends in ELU and average pooling over time. Attention pooling turns
//! the final feature map into a latent column.

use crate::error::{Error, Result};
use crate::nn::{kernels, Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Encoder hyperparameters; all dimensions derive from the trial shape.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EncoderConfig {
    pub channels: usize,
    pub timepoints: usize,
    /// Block-1 temporal kernel length (roughly a quarter window by default).
    pub temporal_kernel: usize,
    /// Block-1 filters per input channel.
    pub depth_multiplier: usize,
    /// Block-2 output feature channels.
    pub block2_features: usize,
    /// Block-3 depthwise temporal kernel length.
    pub sep_kernel: usize,
    /// Latent dimension D (also block-3 output channels).
    pub latent_dim: usize,
    /// Projection head output dimension D'.
    pub proj_dim: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub pool3: usize,
}

impl EncoderConfig {
    pub fn for_shape(channels: usize, timepoints: usize) -> Self {
        Self {
            channels,
            timepoints,
            temporal_kernel: (timepoints / 4).max(3),
            depth_multiplier: 2,
            block2_features: 16,
            sep_kernel: 8,
            latent_dim: 64,
            proj_dim: 32,
            pool1: 4,
            pool2: 2,
            pool3: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("channels", self.channels),
            ("timepoints", self.timepoints),
            ("temporal_kernel", self.temporal_kernel),
            ("depth_multiplier", self.depth_multiplier),
            ("block2_features", self.block2_features),
            ("sep_kernel", self.sep_kernel),
            ("latent_dim", self.latent_dim),
            ("proj_dim", self.proj_dim),
            ("pool1", self.pool1),
            ("pool2", self.pool2),
            ("pool3", self.pool3),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("encoder {name} must be >= 1")));
            }
        }
        if self.timepoints < self.pool1 || self.t1() < self.pool2 || self.t2() < self.pool3 {
            return Err(Error::Dimension(format!(
                "timepoints {} too short for pooling {}x{}x{}",
                self.timepoints, self.pool1, self.pool2, self.pool3
            )));
        }
        Ok(())
    }

    pub fn t1(&self) -> usize {
        self.timepoints / self.pool1
    }

    pub fn t2(&self) -> usize {
        self.t1() / self.pool2
    }

    pub fn t3(&self) -> usize {
        self.t2() / self.pool3
    }

    pub fn block1_channels(&self) -> usize {
        self.channels * self.depth_multiplier
    }
}

/// Feature maps from the three encoder blocks; time extents are
/// non-increasing from `dn1` to `dn3`.
#[derive(Debug, Clone)]
pub struct MultiScaleFeatures<S: Scalar> {
    pub dn1: Array2<S>,
    pub dn2: Array2<S>,
    pub dn3: Array2<S>,
}

/// Parameter handles for the encoder and its attention pool.
pub struct Encoder {
    pub config: EncoderConfig,
    pub b1_w: ParamId,
    pub b1_b: ParamId,
    pub b2_w: ParamId,
    pub b2_b: ParamId,
    pub b3_dw: ParamId,
    pub b3_pw: ParamId,
    pub b3_b: ParamId,
    pub att_w: ParamId,
    pub att_b: ParamId,
}

impl Encoder {
    pub fn new<S: Scalar>(
        config: EncoderConfig,
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let cm = config.block1_channels();
        let b1_w = store.register_glorot(
            "encoder.b1.w",
            ParamGroup::Encoder,
            cm,
            config.temporal_kernel,
            rng,
        );
        let b1_b = store.register_zeros("encoder.b1.b", ParamGroup::Encoder, cm, 1);
        let b2_w = store.register_glorot(
            "encoder.b2.w",
            ParamGroup::Encoder,
            config.block2_features,
            cm,
            rng,
        );
        let b2_b = store.register_zeros(
            "encoder.b2.b",
            ParamGroup::Encoder,
            config.block2_features,
            1,
        );
        let b3_dw = store.register_glorot(
            "encoder.b3.dw",
            ParamGroup::Encoder,
            config.block2_features,
            config.sep_kernel,
            rng,
        );
        let b3_pw = store.register_glorot(
            "encoder.b3.pw",
            ParamGroup::Encoder,
            config.latent_dim,
            config.block2_features,
            rng,
        );
        let b3_b = store.register_zeros("encoder.b3.b", ParamGroup::Encoder, config.latent_dim, 1);
        let att_w =
            store.register_glorot("encoder.att.w", ParamGroup::Pool, 1, config.latent_dim, rng);
        let att_b = store.register_zeros("encoder.att.b", ParamGroup::Pool, 1, 1);
        Ok(Self {
            config,
            b1_w,
            b1_b,
            b2_w,
            b2_b,
            b3_dw,
            b3_pw,
            b3_b,
            att_w,
            att_b,
        })
    }

    fn check_input<S: Scalar>(&self, x: &Array2<S>) -> Result<()> {
        let expected = (self.config.channels, self.config.timepoints);
        if x.dim() != expected {
            return Err(Error::Dimension(format!(
                "encoder input shape {:?}, expected {:?}",
                x.dim(),
                expected
            )));
        }
        Ok(())
    }

    // -- plain (inference) path ------------------------------------------

    pub fn block1<S: Scalar>(&self, store: &ParamStore<S>, x: &Array2<S>) -> Array2<S> {
        let conv =
            kernels::conv_time_depthwise(x, store.value(self.b1_w), self.config.depth_multiplier);
        let biased = &conv + &store.value(self.b1_b).broadcast(conv.dim()).unwrap();
        kernels::avgpool_cols(&kernels::elu(&biased), self.config.pool1)
    }

    pub fn block2<S: Scalar>(&self, store: &ParamStore<S>, dn1: &Array2<S>) -> Array2<S> {
        let mixed = store.value(self.b2_w).dot(dn1);
        let biased = &mixed + &store.value(self.b2_b).broadcast(mixed.dim()).unwrap();
        kernels::avgpool_cols(&kernels::elu(&biased), self.config.pool2)
    }

    pub fn block3<S: Scalar>(&self, store: &ParamStore<S>, dn2: &Array2<S>) -> Array2<S> {
        let dw = kernels::conv_time_depthwise(dn2, store.value(self.b3_dw), 1);
        let pw = store.value(self.b3_pw).dot(&dw);
        let biased = &pw + &store.value(self.b3_b).broadcast(pw.dim()).unwrap();
        kernels::avgpool_cols(&kernels::elu(&biased), self.config.pool3)
    }

    /// Run all three blocks on one trial.
    pub fn encode<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x: &Array2<S>,
    ) -> Result<MultiScaleFeatures<S>> {
        self.check_input(x)?;
        let dn1 = self.block1(store, x);
        let dn2 = self.block2(store, &dn1);
        let dn3 = self.block3(store, &dn2);
        Ok(MultiScaleFeatures { dn1, dn2, dn3 })
    }

    /// Attention pooling: softmax-weighted average of feature columns.
    /// Returns the latent and the attention weights (a distribution over
    /// time).
    pub fn attention_pool<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        dn3: &Array2<S>,
    ) -> Result<(Array1<S>, Array1<S>)> {
        if dn3.ncols() == 0 {
            return Err(Error::Dimension(
                "attention pool needs at least one column".into(),
            ));
        }
        let scores = store.value(self.att_w).dot(dn3)
            + store.value(self.att_b).broadcast((1, dn3.ncols())).unwrap();
        let weights = kernels::softmax_rows(&scores);
        let z = dn3.dot(&weights.t());
        Ok((
            z.index_axis(Axis(1), 0).to_owned(),
            weights.index_axis(Axis(0), 0).to_owned(),
        ))
    }

    /// Full plain path: blocks then pooling.
    pub fn encode_pooled<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x: &Array2<S>,
    ) -> Result<Array1<S>> {
        let features = self.encode(store, x)?;
        Ok(self.attention_pool(store, &features.dn3)?.0)
    }

    // -- graph (training) path -------------------------------------------

    pub fn block1_graph<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Var {
        let w = g.param(store, self.b1_w);
        let b = g.param(store, self.b1_b);
        let conv = g.conv_time_depthwise(x, w, self.config.depth_multiplier);
        let biased = g.add_colvec(conv, b);
        let act = g.elu(biased);
        g.avgpool_cols(act, self.config.pool1)
    }

    pub fn block2_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        dn1: Var,
    ) -> Var {
        let w = g.param(store, self.b2_w);
        let b = g.param(store, self.b2_b);
        let mixed = g.matmul(w, dn1);
        let biased = g.add_colvec(mixed, b);
        let act = g.elu(biased);
        g.avgpool_cols(act, self.config.pool2)
    }

    pub fn block3_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        dn2: Var,
    ) -> Var {
        let dw = g.param(store, self.b3_dw);
        let pw = g.param(store, self.b3_pw);
        let b = g.param(store, self.b3_b);
        let conv = g.conv_time_depthwise(dn2, dw, 1);
        let mixed = g.matmul(pw, conv);
        let biased = g.add_colvec(mixed, b);
        let act = g.elu(biased);
        g.avgpool_cols(act, self.config.pool3)
    }

    /// Attention pooling on the tape; returns the `[D, 1]` latent column.
    pub fn attention_pool_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        dn3: Var,
    ) -> Var {
        let w = g.param(store, self.att_w);
        let b = g.param(store, self.att_b);
        let scores = g.matmul(w, dn3);
        let biased = g.add_colvec(scores, b);
        let weights = g.softmax_rows(biased);
        let wt = g.transpose(weights);
        g.matmul(dn3, wt)
    }

    /// Blocks + pooling on the tape.
    pub fn encode_pooled_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Var {
        let dn1 = self.block1_graph(g, store, x);
        let dn2 = self.block2_graph(g, store, dn1);
        let dn3 = self.block3_graph(g, store, dn2);
        self.attention_pool_graph(g, store, dn3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            channels: 3,
            timepoints: 32,
            temporal_kernel: 7,
            depth_multiplier: 2,
            block2_features: 4,
            sep_kernel: 3,
            latent_dim: 5,
            proj_dim: 4,
            pool1: 2,
            pool2: 2,
            pool3: 2,
        }
    }

    fn build(seed: u64) -> (Encoder, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = Encoder::new(small_config(), &mut store, &mut rng).unwrap();
        (enc, store)
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let (enc, store) = build(1);
        let x = Array2::<f64>::zeros((3, 32));
        let f = enc.encode(&store, &x).unwrap();
        assert!(f.dn1.iter().all(|&v| v == 0.0));
        assert!(f.dn3.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_time_extents_shrink() {
        let (enc, store) = build(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((3, 32), |_| rng.gen_range(-1.0..1.0));
        let f = enc.encode(&store, &x).unwrap();
        assert_eq!(f.dn1.ncols(), 16);
        assert_eq!(f.dn2.ncols(), 8);
        assert_eq!(f.dn3.ncols(), 4);
        assert!(f
            .dn1
            .iter()
            .chain(f.dn2.iter())
            .chain(f.dn3.iter())
            .all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_shape_is_a_dimension_error() {
        let (enc, store) = build(4);
        let x = Array2::<f64>::zeros((3, 31));
        assert!(enc.encode(&store, &x).is_err());
    }

    #[test]
    fn too_short_window_is_rejected_at_config_time() {
        let cfg = EncoderConfig {
            timepoints: 4,
            pool1: 8,
            ..small_config()
        };
        assert!(cfg.validate().is_err());
    }

    /// Straight-line reference computation of the full conv/pool stack with
    /// explicit nested loops, reading the same weights.
    fn reference_dn3(enc: &Encoder, store: &ParamStore<f64>, x: &Array2<f64>) -> Array2<f64> {
        let cfg = &enc.config;
        let elu = |v: f64| if v > 0.0 { v } else { v.exp() - 1.0 };

        let w1 = store.value(enc.b1_w);
        let b1 = store.value(enc.b1_b);
        let k1 = cfg.temporal_kernel;
        let off1 = k1 / 2;
        let cm = cfg.block1_channels();
        let mut h1 = Array2::<f64>::zeros((cm, cfg.timepoints));
        for r in 0..cm {
            let src = r / cfg.depth_multiplier;
            for t in 0..cfg.timepoints {
                let mut acc = 0.0;
                for k in 0..k1 {
                    let idx = t as isize + k as isize - off1 as isize;
                    if idx >= 0 && (idx as usize) < cfg.timepoints {
                        acc += w1[[r, k]] * x[[src, idx as usize]];
                    }
                }
                h1[[r, t]] = elu(acc + b1[[r, 0]]);
            }
        }
        let t1 = cfg.t1();
        let mut dn1 = Array2::<f64>::zeros((cm, t1));
        for r in 0..cm {
            for o in 0..t1 {
                dn1[[r, o]] = (0..cfg.pool1)
                    .map(|k| h1[[r, o * cfg.pool1 + k]])
                    .sum::<f64>()
                    / cfg.pool1 as f64;
            }
        }

        let w2 = store.value(enc.b2_w);
        let b2 = store.value(enc.b2_b);
        let mut h2 = Array2::<f64>::zeros((cfg.block2_features, t1));
        for f in 0..cfg.block2_features {
            for t in 0..t1 {
                let mut acc = 0.0;
                for j in 0..cm {
                    acc += w2[[f, j]] * dn1[[j, t]];
                }
                h2[[f, t]] = elu(acc + b2[[f, 0]]);
            }
        }
        let t2 = cfg.t2();
        let mut dn2 = Array2::<f64>::zeros((cfg.block2_features, t2));
        for f in 0..cfg.block2_features {
            for o in 0..t2 {
                dn2[[f, o]] = (0..cfg.pool2)
                    .map(|k| h2[[f, o * cfg.pool2 + k]])
                    .sum::<f64>()
                    / cfg.pool2 as f64;
            }
        }

        let w3d = store.value(enc.b3_dw);
        let w3p = store.value(enc.b3_pw);
        let b3 = store.value(enc.b3_b);
        let k3 = cfg.sep_kernel;
        let off3 = k3 / 2;
        let mut dwout = Array2::<f64>::zeros((cfg.block2_features, t2));
        for f in 0..cfg.block2_features {
            for t in 0..t2 {
                let mut acc = 0.0;
                for k in 0..k3 {
                    let idx = t as isize + k as isize - off3 as isize;
                    if idx >= 0 && (idx as usize) < t2 {
                        acc += w3d[[f, k]] * dn2[[f, idx as usize]];
                    }
                }
                dwout[[f, t]] = acc;
            }
        }
        let mut h3 = Array2::<f64>::zeros((cfg.latent_dim, t2));
        for d in 0..cfg.latent_dim {
            for t in 0..t2 {
                let mut acc = 0.0;
                for f in 0..cfg.block2_features {
                    acc += w3p[[d, f]] * dwout[[f, t]];
                }
                h3[[d, t]] = elu(acc + b3[[d, 0]]);
            }
        }
        let t3 = cfg.t3();
        let mut dn3 = Array2::<f64>::zeros((cfg.latent_dim, t3));
        for d in 0..cfg.latent_dim {
            for o in 0..t3 {
                dn3[[d, o]] = (0..cfg.pool3)
                    .map(|k| h3[[d, o * cfg.pool3 + k]])
                    .sum::<f64>()
                    / cfg.pool3 as f64;
            }
        }
        dn3
    }

    #[test]
    fn dn3_matches_straight_line_reference() {
        let (enc, store) = build(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((3, 32), |_| rng.gen_range(-1.0..1.0));
        let f = enc.encode(&store, &x).unwrap();
        let reference = reference_dn3(&enc, &store, &x);
        for (a, b) in f.dn3.iter().zip(reference.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        let (enc, store) = build(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let x = Array2::from_shape_fn((3, 32), |_| rng.gen_range(-2.0..2.0));
            let f = enc.encode(&store, &x).unwrap();
            let (_, weights) = enc.attention_pool(&store, &f.dn3).unwrap();
            assert!(weights.iter().all(|&w| w >= 0.0));
            assert_abs_diff_eq!(weights.sum(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn constant_features_pool_to_that_constant() {
        let (enc, store) = build(9);
        let column: Vec<f64> = (0..5).map(|i| i as f64 * 0.3 - 0.5).collect();
        let dn3 = Array2::from_shape_fn((5, 4), |(i, _)| column[i]);
        let (z, _) = enc.attention_pool(&store, &dn3).unwrap();
        for (zi, ci) in z.iter().zip(&column) {
            assert_abs_diff_eq!(zi, ci, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_timepoint_pools_to_that_column() {
        let (enc, store) = build(10);
        let dn3 = Array2::from_shape_fn((5, 1), |(i, _)| i as f64);
        let (z, weights) = enc.attention_pool(&store, &dn3).unwrap();
        assert_eq!(weights.len(), 1);
        assert_abs_diff_eq!(weights[0], 1.0, epsilon = 1e-12);
        for (i, zi) in z.iter().enumerate() {
            assert_abs_diff_eq!(*zi, i as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn attention_weights_match_independent_softmax_oracle() {
        let (enc, store) = build(15);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = Array2::from_shape_fn((3, 32), |_| rng.gen_range(-1.0..1.0));
        let f = enc.encode(&store, &x).unwrap();
        let (_, weights) = enc.attention_pool(&store, &f.dn3).unwrap();

        // direct score computation and softmax, independent of the kernels
        let v = store.value(enc.att_w);
        let b = store.value(enc.att_b)[[0, 0]];
        let scores: Vec<f64> = (0..f.dn3.ncols())
            .map(|t| {
                (0..f.dn3.nrows())
                    .map(|i| v[[0, i]] * f.dn3[[i, t]])
                    .sum::<f64>()
                    + b
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::MIN, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut oracle_sum = 0.0;
        for (w, e) in weights.iter().zip(&exps) {
            assert_abs_diff_eq!(*w, e / total, epsilon = 1e-9);
            oracle_sum += e / total;
        }
        assert_abs_diff_eq!(oracle_sum, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn batch_order_does_not_change_per_trial_outputs() {
        let (enc, store) = build(17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let batch: Vec<Array2<f64>> = (0..4)
            .map(|_| Array2::from_shape_fn((3, 32), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let forward: Vec<_> = batch
            .iter()
            .map(|x| enc.encode_pooled(&store, x).unwrap())
            .collect();
        let permutation = [2usize, 0, 3, 1];
        let permuted: Vec<_> = permutation
            .iter()
            .map(|&i| enc.encode_pooled(&store, &batch[i]).unwrap())
            .collect();
        for (slot, &src) in permutation.iter().enumerate() {
            assert_eq!(forward[src], permuted[slot]);
        }
    }

    #[test]
    fn graph_path_matches_plain_path() {
        let (enc, store) = build(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Array2::from_shape_fn((3, 32), |_| rng.gen_range(-1.0..1.0));
        let plain = enc.encode_pooled(&store, &x).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x);
        let zv = enc.encode_pooled_graph(&mut g, &store, xv);
        let graph_z = g.value(zv);
        for (a, b) in plain.iter().zip(graph_z.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let (enc, mut store) = build(13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = Array2::from_shape_fn((3, 32), |_| rng.gen_range(-1.0..1.0));
        let probe = Array2::from_shape_fn((5, 1), |_| rng.gen_range(-1.0..1.0));
        let params = [
            enc.b1_w, enc.b1_b, enc.b2_w, enc.b2_b, enc.b3_dw, enc.b3_pw, enc.b3_b, enc.att_w,
            enc.att_b,
        ];
        crate::nn::gradcheck::check_loss_grads(
            &mut store,
            &params,
            |g, st| {
                let xv = g.constant(x.clone());
                let z = enc.encode_pooled_graph(g, st, xv);
                g.weighted_sum_const(z, probe.clone())
            },
            1e-6,
            1e-4,
        );
    }
}
