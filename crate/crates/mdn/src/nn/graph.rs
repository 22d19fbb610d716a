//! Minimal reverse-mode autodiff over 2-D arrays.
//!
//! A `Graph` is a tape: every operation evaluates eagerly and records enough
//! to propagate gradients backwards. Tensors are `Array2` throughout; vectors
//! are columns. One graph is built per training step and discarded.

use super::params::{ParamId, ParamStore};
use crate::scalar::{s, Scalar};
use ndarray::{Array1, Array2, Axis};

/// Handle to a node in the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<S: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    AddColVec(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Elu(Var),
    SoftmaxRows(Var),
    SoftmaxCols(Var),
    LogSumExpCols(Var),
    LogSumExpRowsOffDiag(Var),
    SumAll(Var),
    WeightedSumConst(Var, Array2<S>),
    Abs(Var),
    Sqrt(Var),
    DivByScalar(Var, Var),
    AvgPoolCols(Var, usize),
    ConvTimeDepthwise { x: Var, w: Var, mult: usize },
    SelectRow(Var, usize),
    RepeatColsTo(Var, usize),
    Reshape(Var),
    StackCols(Vec<Var>),
}

pub struct Graph<S: Scalar> {
    values: Vec<Array2<S>>,
    ops: Vec<Op<S>>,
    param_leaves: Vec<(Var, ParamId)>,
    param_cache: std::collections::BTreeMap<ParamId, Var>,
}

/// Shared forward kernels, usable outside the tape for inference paths.
pub mod kernels {
    use super::*;

    pub fn elu<S: Scalar>(x: &Array2<S>) -> Array2<S> {
        x.mapv(|v| if v > S::zero() { v } else { v.exp() - S::one() })
    }

    /// Column-wise average pooling with window `p`; trailing columns that do
    /// not fill a window are dropped.
    pub fn avgpool_cols<S: Scalar>(x: &Array2<S>, p: usize) -> Array2<S> {
        let (n, t) = x.dim();
        let out_t = t / p;
        assert!(out_t >= 1, "pooling window {p} exceeds {t} columns");
        let inv = S::one() / s::<S>(p as f64);
        Array2::from_shape_fn((n, out_t), |(i, o)| {
            let mut acc = S::zero();
            for k in 0..p {
                acc += x[[i, o * p + k]];
            }
            acc * inv
        })
    }

    /// Depthwise temporal convolution with zero padding ("same" length).
    ///
    /// `x` is `[C, T]`, `w` is `[C*mult, k]`; output row `c*mult + m` is input
    /// row `c` filtered by weight row `c*mult + m`.
    pub fn conv_time_depthwise<S: Scalar>(x: &Array2<S>, w: &Array2<S>, mult: usize) -> Array2<S> {
        let (c, t) = x.dim();
        let (rows, k) = w.dim();
        assert_eq!(rows, c * mult, "weight rows must equal channels*mult");
        let off = k / 2;
        let mut out = Array2::zeros((rows, t));
        for r in 0..rows {
            let src = r / mult;
            for ti in 0..t {
                let mut acc = S::zero();
                for kk in 0..k {
                    let idx = ti as isize + kk as isize - off as isize;
                    if idx >= 0 && (idx as usize) < t {
                        acc += w[[r, kk]] * x[[src, idx as usize]];
                    }
                }
                out[[r, ti]] = acc;
            }
        }
        out
    }

    /// Nearest-neighbor column upsample of `x` to `target` columns.
    pub fn repeat_cols_to<S: Scalar>(x: &Array2<S>, target: usize) -> Array2<S> {
        let (n, t) = x.dim();
        assert!(t >= 1 && target >= 1);
        Array2::from_shape_fn((n, target), |(i, o)| x[[i, (o * t / target).min(t - 1)]])
    }

    pub fn softmax_cols<S: Scalar>(x: &Array2<S>) -> Array2<S> {
        let (n, m) = x.dim();
        let mut out = Array2::zeros((n, m));
        for j in 0..m {
            let col = x.column(j);
            let max = col.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for i in 0..n {
                let e = (col[i] - max).exp();
                out[[i, j]] = e;
                total += e;
            }
            for i in 0..n {
                out[[i, j]] /= total;
            }
        }
        out
    }

    pub fn softmax_rows<S: Scalar>(x: &Array2<S>) -> Array2<S> {
        softmax_cols(&x.t().to_owned()).t().to_owned()
    }

    pub fn logsumexp_cols<S: Scalar>(x: &Array2<S>) -> Array2<S> {
        let (n, m) = x.dim();
        let mut out = Array2::zeros((1, m));
        for j in 0..m {
            let col = x.column(j);
            let max = col.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for i in 0..n {
                total += (col[i] - max).exp();
            }
            out[[0, j]] = max + total.ln();
        }
        out
    }

    /// Row-wise log-sum-exp over off-diagonal entries of a square matrix.
    pub fn logsumexp_rows_offdiag<S: Scalar>(x: &Array2<S>) -> Array2<S> {
        let (n, m) = x.dim();
        assert_eq!(n, m, "off-diagonal LSE requires a square matrix");
        assert!(n >= 2);
        let mut out = Array2::zeros((n, 1));
        for i in 0..n {
            let mut max = S::neg_infinity();
            for j in 0..n {
                if j != i && x[[i, j]] > max {
                    max = x[[i, j]];
                }
            }
            let mut total = S::zero();
            for j in 0..n {
                if j != i {
                    total += (x[[i, j]] - max).exp();
                }
            }
            out[[i, 0]] = max + total.ln();
        }
        out
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
            param_leaves: Vec::new(),
            param_cache: std::collections::BTreeMap::new(),
        }
    }

    fn push(&mut self, value: Array2<S>, op: Op<S>) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<S> {
        &self.values[v.0]
    }

    pub fn scalar_value(&self, v: Var) -> S {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    /// Insert a tensor that does not require gradients.
    pub fn constant(&mut self, value: Array2<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Insert a parameter from the store, remembering the link so its
    /// gradient can be read back after `backward`. Repeated insertions of the
    /// same parameter share one node.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.param_cache.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf);
        self.param_leaves.push((v, id));
        self.param_cache.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.values[a.0] + &self.values[b.0];
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.values[a.0] - &self.values[b.0];
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.values[a.0] * &self.values[b.0];
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = self.values[a.0].mapv(|v| v * c);
        self.push(value, Op::Scale(a, c))
    }

    /// `x + b` where `b` is a column broadcast over x's columns.
    pub fn add_colvec(&mut self, x: Var, b: Var) -> Var {
        let bv = &self.values[b.0];
        assert_eq!(bv.ncols(), 1);
        let value = &self.values[x.0] + &bv.broadcast(self.values[x.0].dim()).unwrap();
        self.push(value, Op::AddColVec(x, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.values[a.0].dot(&self.values[b.0]);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.values[a.0].t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = kernels::elu(&self.values[a.0]);
        self.push(value, Op::Elu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = kernels::softmax_rows(&self.values[a.0]);
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let value = kernels::softmax_cols(&self.values[a.0]);
        self.push(value, Op::SoftmaxCols(a))
    }

    pub fn logsumexp_cols(&mut self, a: Var) -> Var {
        let value = kernels::logsumexp_cols(&self.values[a.0]);
        self.push(value, Op::LogSumExpCols(a))
    }

    pub fn logsumexp_rows_offdiag(&mut self, a: Var) -> Var {
        let value = kernels::logsumexp_rows_offdiag(&self.values[a.0]);
        self.push(value, Op::LogSumExpRowsOffDiag(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total: S = self.values[a.0].iter().copied().sum();
        self.push(Array2::from_elem((1, 1), total), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.values[a.0].len();
        let total = self.sum_all(a);
        self.scale(total, S::one() / s::<S>(n as f64))
    }

    /// `sum(weights ∘ a)` with a constant weight matrix.
    pub fn weighted_sum_const(&mut self, a: Var, weights: Array2<S>) -> Var {
        assert_eq!(self.values[a.0].dim(), weights.dim());
        let total: S = self.values[a.0]
            .iter()
            .zip(weights.iter())
            .map(|(&x, &w)| x * w)
            .sum();
        self.push(
            Array2::from_elem((1, 1), total),
            Op::WeightedSumConst(a, weights),
        )
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(|v| v.abs());
        self.push(value, Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(|v| v.sqrt());
        self.push(value, Op::Sqrt(a))
    }

    /// `a / c` where `c` is a `[1,1]` node.
    pub fn div_by_scalar(&mut self, a: Var, c: Var) -> Var {
        let divisor = self.scalar_value(c);
        let value = self.values[a.0].mapv(|v| v / divisor);
        self.push(value, Op::DivByScalar(a, c))
    }

    pub fn avgpool_cols(&mut self, a: Var, p: usize) -> Var {
        let value = kernels::avgpool_cols(&self.values[a.0], p);
        self.push(value, Op::AvgPoolCols(a, p))
    }

    pub fn conv_time_depthwise(&mut self, x: Var, w: Var, mult: usize) -> Var {
        let value = kernels::conv_time_depthwise(&self.values[x.0], &self.values[w.0], mult);
        self.push(value, Op::ConvTimeDepthwise { x, w, mult })
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Var {
        let value = self.values[a.0].row(row).to_owned().insert_axis(Axis(0));
        self.push(value, Op::SelectRow(a, row))
    }

    pub fn repeat_cols_to(&mut self, a: Var, target: usize) -> Var {
        let value = kernels::repeat_cols_to(&self.values[a.0], target);
        self.push(value, Op::RepeatColsTo(a, target))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<S> = self.values[a.0].iter().copied().collect();
        let value = Array2::from_shape_vec((rows, cols), flat).expect("element count preserved");
        self.push(value, Op::Reshape(a))
    }

    /// Stack `[n,1]` columns into an `[n, B]` matrix.
    pub fn stack_cols(&mut self, cols: &[Var]) -> Var {
        assert!(!cols.is_empty());
        let n = self.values[cols[0].0].nrows();
        let mut value = Array2::zeros((n, cols.len()));
        for (j, v) in cols.iter().enumerate() {
            let col = &self.values[v.0];
            assert_eq!(col.dim(), (n, 1));
            for i in 0..n {
                value[[i, j]] = col[[i, 0]];
            }
        }
        self.push(value, Op::StackCols(cols.to_vec()))
    }

    /// Reverse pass from a `[1,1]` loss node. Returns one gradient per node.
    pub fn backward(&mut self, loss: Var) -> Gradients<S> {
        assert_eq!(self.values[loss.0].dim(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Array2<S>> =
            self.values.iter().map(|v| Array2::zeros(v.dim())).collect();
        grads[loss.0][[0, 0]] = S::one();

        for idx in (0..self.ops.len()).rev() {
            let g = grads[idx].clone();
            if g.iter().all(|v| *v == S::zero()) {
                continue;
            }
            match &self.ops[idx] {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    grads[a.0] += &g;
                    grads[b.0] += &g;
                }
                Op::Sub(a, b) => {
                    grads[a.0] += &g;
                    grads[b.0] -= &g;
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.values[b.0];
                    let db = &g * &self.values[a.0];
                    grads[a.0] += &da;
                    grads[b.0] += &db;
                }
                Op::Scale(a, c) => {
                    let da = g.mapv(|v| v * *c);
                    grads[a.0] += &da;
                }
                Op::AddColVec(x, b) => {
                    grads[x.0] += &g;
                    let db = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    grads[b.0] += &db;
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.values[b.0].t());
                    let db = self.values[a.0].t().dot(&g);
                    grads[a.0] += &da;
                    grads[b.0] += &db;
                }
                Op::Transpose(a) => {
                    let da = g.t().to_owned();
                    grads[a.0] += &da;
                }
                Op::Elu(a) => {
                    let x = &self.values[a.0];
                    let da = Array2::from_shape_fn(x.dim(), |ij| {
                        let xv = x[ij];
                        let slope = if xv > S::zero() { S::one() } else { xv.exp() };
                        g[ij] * slope
                    });
                    grads[a.0] += &da;
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.values[idx];
                    let mut da = Array2::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let mut dot = S::zero();
                        for j in 0..y.ncols() {
                            dot += g[[i, j]] * y[[i, j]];
                        }
                        for j in 0..y.ncols() {
                            da[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    grads[a.0] += &da;
                }
                Op::SoftmaxCols(a) => {
                    let y = &self.values[idx];
                    let mut da = Array2::zeros(y.dim());
                    for j in 0..y.ncols() {
                        let mut dot = S::zero();
                        for i in 0..y.nrows() {
                            dot += g[[i, j]] * y[[i, j]];
                        }
                        for i in 0..y.nrows() {
                            da[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    grads[a.0] += &da;
                }
                Op::LogSumExpCols(a) => {
                    let soft = kernels::softmax_cols(&self.values[a.0]);
                    let mut da = Array2::zeros(soft.dim());
                    for j in 0..soft.ncols() {
                        for i in 0..soft.nrows() {
                            da[[i, j]] = g[[0, j]] * soft[[i, j]];
                        }
                    }
                    grads[a.0] += &da;
                }
                Op::LogSumExpRowsOffDiag(a) => {
                    let x = &self.values[a.0];
                    let lse = &self.values[idx];
                    let n = x.nrows();
                    let mut da = Array2::zeros(x.dim());
                    for i in 0..n {
                        for j in 0..n {
                            if j != i {
                                da[[i, j]] = g[[i, 0]] * (x[[i, j]] - lse[[i, 0]]).exp();
                            }
                        }
                    }
                    grads[a.0] += &da;
                }
                Op::SumAll(a) => {
                    let gv = g[[0, 0]];
                    let da = Array2::from_elem(self.values[a.0].dim(), gv);
                    grads[a.0] += &da;
                }
                Op::WeightedSumConst(a, w) => {
                    let gv = g[[0, 0]];
                    let da = w.mapv(|wv| wv * gv);
                    grads[a.0] += &da;
                }
                Op::Abs(a) => {
                    let x = &self.values[a.0];
                    let da = Array2::from_shape_fn(x.dim(), |ij| {
                        let sign = if x[ij] > S::zero() {
                            S::one()
                        } else if x[ij] < S::zero() {
                            -S::one()
                        } else {
                            S::zero()
                        };
                        g[ij] * sign
                    });
                    grads[a.0] += &da;
                }
                Op::Sqrt(a) => {
                    let y = &self.values[idx];
                    let half = s::<S>(0.5);
                    let da = Array2::from_shape_fn(y.dim(), |ij| g[ij] * half / y[ij]);
                    grads[a.0] += &da;
                }
                Op::DivByScalar(a, c) => {
                    let divisor = self.values[c.0][[0, 0]];
                    let da = g.mapv(|v| v / divisor);
                    grads[a.0] += &da;
                    let mut dc = S::zero();
                    for (gv, av) in g.iter().zip(self.values[a.0].iter()) {
                        dc -= *gv * *av;
                    }
                    grads[c.0][[0, 0]] += dc / (divisor * divisor);
                }
                Op::AvgPoolCols(a, p) => {
                    let (n, out_t) = self.values[idx].dim();
                    let inv = S::one() / s::<S>(*p as f64);
                    let mut da = Array2::zeros(self.values[a.0].dim());
                    for i in 0..n {
                        for o in 0..out_t {
                            let gv = g[[i, o]] * inv;
                            for k in 0..*p {
                                da[[i, o * p + k]] += gv;
                            }
                        }
                    }
                    grads[a.0] += &da;
                }
                Op::ConvTimeDepthwise { x, w, mult } => {
                    let xv = &self.values[x.0];
                    let wv = &self.values[w.0];
                    let (_, t) = xv.dim();
                    let (rows, k) = wv.dim();
                    let off = k / 2;
                    let mut dx = Array2::zeros(xv.dim());
                    let mut dw = Array2::zeros(wv.dim());
                    for r in 0..rows {
                        let src = r / mult;
                        for ti in 0..t {
                            let gv = g[[r, ti]];
                            if gv == S::zero() {
                                continue;
                            }
                            for kk in 0..k {
                                let idx2 = ti as isize + kk as isize - off as isize;
                                if idx2 >= 0 && (idx2 as usize) < t {
                                    dw[[r, kk]] += gv * xv[[src, idx2 as usize]];
                                    dx[[src, idx2 as usize]] += gv * wv[[r, kk]];
                                }
                            }
                        }
                    }
                    grads[x.0] += &dx;
                    grads[w.0] += &dw;
                }
                Op::SelectRow(a, row) => {
                    let mut da = Array2::zeros(self.values[a.0].dim());
                    for j in 0..g.ncols() {
                        da[[*row, j]] = g[[0, j]];
                    }
                    grads[a.0] += &da;
                }
                Op::RepeatColsTo(a, target) => {
                    let (n, t) = self.values[a.0].dim();
                    let mut da = Array2::zeros((n, t));
                    for i in 0..n {
                        for o in 0..*target {
                            da[[i, (o * t / target).min(t - 1)]] += g[[i, o]];
                        }
                    }
                    grads[a.0] += &da;
                }
                Op::Reshape(a) => {
                    let dim = self.values[a.0].dim();
                    let flat: Vec<S> = g.iter().copied().collect();
                    let da = Array2::from_shape_vec(dim, flat).unwrap();
                    grads[a.0] += &da;
                }
                Op::StackCols(cols) => {
                    for (j, v) in cols.iter().enumerate() {
                        let col: Array1<S> = g.column(j).to_owned();
                        let da = col.insert_axis(Axis(1));
                        grads[v.0] += &da;
                    }
                }
            }
        }

        Gradients {
            grads,
            param_leaves: self.param_leaves.clone(),
        }
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients for every node, with the param-leaf bookkeeping needed to pull
/// out per-parameter gradients (summed across repeated insertions).
pub struct Gradients<S: Scalar> {
    grads: Vec<Array2<S>>,
    param_leaves: Vec<(Var, ParamId)>,
}

impl<S: Scalar> Gradients<S> {
    pub fn of(&self, v: Var) -> &Array2<S> {
        &self.grads[v.0]
    }

    /// Accumulated gradient per parameter id.
    pub fn by_param(&self) -> Vec<(ParamId, Array2<S>)> {
        let mut acc: std::collections::BTreeMap<ParamId, Array2<S>> = Default::default();
        for (var, id) in &self.param_leaves {
            acc.entry(*id)
                .and_modify(|a| *a += &self.grads[var.0])
                .or_insert_with(|| self.grads[var.0].clone());
        }
        acc.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_loss_grads;
    use crate::nn::params::{ParamGroup, ParamStore};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn matmul_chain_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let w = store.register(
            "w",
            ParamGroup::Encoder,
            array![[0.3, -0.2], [0.5, 0.1], [-0.4, 0.7]],
        );
        let b = store.register("b", ParamGroup::Encoder, array![[0.1], [0.2], [-0.3]]);
        let x = array![[1.0], [2.0]];
        check_loss_grads(
            &mut store,
            &[w, b],
            |g, st| {
                let wv = g.param(st, w);
                let bv = g.param(st, b);
                let xv = g.constant(x.clone());
                let h = g.matmul(wv, xv);
                let h = g.add(h, bv);
                let h = g.elu(h);
                let sq = g.mul(h, h);
                g.sum_all(sq)
            },
            1e-6,
            1e-6,
        );
    }

    #[test]
    fn conv_and_pool_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let w = store.register(
            "w",
            ParamGroup::Encoder,
            array![
                [0.2, -0.1, 0.4],
                [0.3, 0.2, -0.5],
                [-0.2, 0.6, 0.1],
                [0.05, -0.3, 0.2]
            ],
        );
        let x = array![
            [0.5, -0.2, 0.8, 0.1, -0.6, 0.3],
            [0.9, 0.4, -0.7, 0.2, 0.5, -0.1]
        ];
        check_loss_grads(
            &mut store,
            &[w],
            |g, st| {
                let wv = g.param(st, w);
                let xv = g.constant(x.clone());
                let c = g.conv_time_depthwise(xv, wv, 2);
                let c = g.elu(c);
                let p = g.avgpool_cols(c, 2);
                let sq = g.mul(p, p);
                g.sum_all(sq)
            },
            1e-6,
            1e-6,
        );
    }

    #[test]
    fn softmax_and_lse_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let w = store.register("w", ParamGroup::Classifier, array![[0.3, -0.4], [0.8, 0.2]]);
        check_loss_grads(
            &mut store,
            &[w],
            |g, st| {
                let wv = g.param(st, w);
                let lse = g.logsumexp_cols(wv);
                let soft = g.softmax_cols(wv);
                let mixed = g.weighted_sum_const(soft, array![[1.0, -2.0], [0.5, 0.3]]);
                let lse_sum = g.sum_all(lse);
                g.add(mixed, lse_sum)
            },
            1e-6,
            1e-6,
        );
    }

    #[test]
    fn repeated_param_use_accumulates_gradient() {
        let mut store = ParamStore::<f64>::new();
        let w = store.register("w", ParamGroup::Encoder, array![[2.0]]);
        let mut g = Graph::new();
        let w1 = g.param(&store, w);
        let w2 = g.param(&store, w);
        let prod = g.mul(w1, w2); // w^2, d/dw = 2w = 4
        let loss = g.sum_all(prod);
        let grads = g.backward(loss);
        let by_param = grads.by_param();
        assert_eq!(by_param.len(), 1);
        assert_abs_diff_eq!(by_param[0].1[[0, 0]], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn stack_and_select_round_trip_gradients() {
        let mut store = ParamStore::<f64>::new();
        let w = store.register("w", ParamGroup::Encoder, array![[0.5], [1.5], [-0.7]]);
        check_loss_grads(
            &mut store,
            &[w],
            |g, st| {
                let wv = g.param(st, w);
                let stacked = g.stack_cols(&[wv, wv]);
                let row = g.select_row(stacked, 1);
                let up = g.repeat_cols_to(row, 5);
                let sq = g.mul(up, up);
                g.sum_all(sq)
            },
            1e-6,
            1e-6,
        );
    }
}
