//! Contrastive projection head: one hidden layer then L2 normalization.

use crate::error::Result;
use crate::nn::{Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::scalar::{s, Scalar};
use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

/// Pre-normalization norms below this are treated as the zero vector.
const ZERO_NORM_EPS: f64 = 1e-12;

pub struct ProjectionHead {
    pub in_dim: usize,
    pub out_dim: usize,
    pub h_w: ParamId,
    pub h_b: ParamId,
    pub o_w: ParamId,
    pub o_b: ParamId,
}

impl ProjectionHead {
    pub fn new<S: Scalar>(
        in_dim: usize,
        out_dim: usize,
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let h_w = store.register_glorot(
            "projection.h.w",
            ParamGroup::Projection,
            in_dim,
            in_dim,
            rng,
        );
        let h_b = store.register_zeros("projection.h.b", ParamGroup::Projection, in_dim, 1);
        let o_w = store.register_glorot(
            "projection.o.w",
            ParamGroup::Projection,
            out_dim,
            in_dim,
            rng,
        );
        let o_b = store.register_zeros("projection.o.b", ParamGroup::Projection, out_dim, 1);
        Self {
            in_dim,
            out_dim,
            h_w,
            h_b,
            o_w,
            o_b,
        }
    }

    fn raw_plain<S: Scalar>(&self, store: &ParamStore<S>, z: &Array2<S>) -> Array2<S> {
        let hidden = store.value(self.h_w).dot(z) + store.value(self.h_b);
        let hidden = hidden.mapv(|v| if v > S::zero() { v } else { v.exp() - S::one() });
        store.value(self.o_w).dot(&hidden) + store.value(self.o_b)
    }

    /// Map a latent to the unit sphere. A (probability-zero) zero vector
    /// before normalization falls back to the first basis vector so the
    /// contrastive loss stays finite.
    pub fn project<S: Scalar>(&self, store: &ParamStore<S>, z: &Array1<S>) -> Result<Array1<S>> {
        let col = z.clone().insert_axis(Axis(1));
        let raw = self.raw_plain(store, &col);
        let norm = raw.iter().map(|&v| v * v).sum::<S>().sqrt();
        if norm < s::<S>(ZERO_NORM_EPS) {
            let mut basis = Array1::zeros(self.out_dim);
            basis[0] = S::one();
            return Ok(basis);
        }
        Ok(raw.index_axis(Axis(1), 0).mapv(|v| v / norm))
    }

    /// Tape version; `z` is a `[D, 1]` column, output is a unit `[D', 1]`
    /// column. The zero-vector fallback returns a constant basis vector
    /// (no gradient), matching the plain path.
    pub fn project_graph<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, z: Var) -> Var {
        let hw = g.param(store, self.h_w);
        let hb = g.param(store, self.h_b);
        let ow = g.param(store, self.o_w);
        let ob = g.param(store, self.o_b);
        let hidden = g.matmul(hw, z);
        let hidden = g.add_colvec(hidden, hb);
        let hidden = g.elu(hidden);
        let raw = g.matmul(ow, hidden);
        let raw = g.add_colvec(raw, ob);

        let norm_sq_val: S = g.value(raw).iter().map(|&v| v * v).sum();
        if norm_sq_val.sqrt() < s::<S>(ZERO_NORM_EPS) {
            let mut basis = Array2::zeros((self.out_dim, 1));
            basis[[0, 0]] = S::one();
            return g.constant(basis);
        }
        let sq = g.mul(raw, raw);
        let norm_sq = g.sum_all(sq);
        let norm = g.sqrt(norm_sq);
        g.div_by_scalar(raw, norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn build() -> (ProjectionHead, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = ProjectionHead::new(5, 3, &mut store, &mut rng);
        (head, store)
    }

    #[test]
    fn output_is_unit_norm() {
        let (head, store) = build();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let z = Array1::from_shape_fn(5, |_| rng.gen_range(-3.0..3.0));
            let p = head.project(&store, &z).unwrap();
            let norm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_raw_vector_falls_back_to_basis() {
        let (head, mut store) = build();
        // Zero all output-layer weights so the raw projection is exactly zero.
        store.set_value(head.o_w, Array2::zeros((3, 5)));
        store.set_value(head.o_b, Array2::zeros((3, 1)));
        let z = Array1::from_vec(vec![1.0, -0.5, 0.2, 0.8, -1.0]);
        let p = head.project(&store, &z).unwrap();
        assert_eq!(p.to_vec(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn matches_independent_matmul_normalize_oracle() {
        let (head, store) = build();
        let z = Array1::from_vec(vec![0.4, -1.2, 0.9, 0.0, 2.0]);
        let p = head.project(&store, &z).unwrap();

        let hw = store.value(head.h_w);
        let hb = store.value(head.h_b);
        let ow = store.value(head.o_w);
        let ob = store.value(head.o_b);
        let elu = |v: f64| if v > 0.0 { v } else { v.exp() - 1.0 };
        let mut hidden = [0.0; 5];
        for i in 0..5 {
            let mut acc = hb[[i, 0]];
            for j in 0..5 {
                acc += hw[[i, j]] * z[j];
            }
            hidden[i] = elu(acc);
        }
        let mut raw = [0.0; 3];
        for i in 0..3 {
            let mut acc = ob[[i, 0]];
            for j in 0..5 {
                acc += ow[[i, j]] * hidden[j];
            }
            raw[i] = acc;
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..3 {
            assert_abs_diff_eq!(p[i], raw[i] / norm, epsilon = 1e-12);
        }
    }

    #[test]
    fn graph_matches_plain_and_gradients_check() {
        let (head, mut store) = build();
        let z = Array1::from_vec(vec![0.4, -1.2, 0.9, 0.3, 2.0]);
        let plain = head.project(&store, &z).unwrap();
        let mut g = Graph::new();
        let zv = g.constant(z.clone().insert_axis(Axis(1)));
        let pv = head.project_graph(&mut g, &store, zv);
        for (a, b) in plain.iter().zip(g.value(pv).iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }

        let col = z.insert_axis(Axis(1));
        let probe = Array2::from_shape_fn((3, 1), |(i, _)| 0.3 + i as f64);
        let params = [head.h_w, head.h_b, head.o_w, head.o_b];
        crate::nn::gradcheck::check_loss_grads(
            &mut store,
            &params,
            |g, st| {
                let zv = g.constant(col.clone());
                let p = head.project_graph(g, st, zv);
                g.weighted_sum_const(p, probe.clone())
            },
            1e-6,
            1e-4,
        );
    }
}
