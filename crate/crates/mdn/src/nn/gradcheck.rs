//! Central-finite-difference gradient verification.
//!
//! Used by tests across the crate: rebuild the loss with a parameter entry
//! perturbed by ±h and compare the analytic gradient against
//! `(f(x+h) - f(x-h)) / 2h` elementwise.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Relative error between an analytic and a finite-difference derivative,
/// with an absolute floor so near-zero pairs compare absolutely.
pub fn relative_error<S: Scalar>(analytic: S, fd: S) -> f64 {
    let a = analytic.to_f64_lossy();
    let b = fd.to_f64_lossy();
    let scale = a.abs().max(b.abs());
    if scale < 1e-6 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Verify analytic gradients of a scalar loss against central finite
/// differences for every listed parameter.
///
/// `build` must construct the loss from the current parameter values each
/// time it is called. Panics with a description of the worst entry when the
/// check fails.
pub fn check_loss_grads<S, F>(
    store: &mut ParamStore<S>,
    params: &[ParamId],
    mut build: F,
    h: f64,
    tolerance: f64,
) where
    S: Scalar,
    F: FnMut(&mut Graph<S>, &ParamStore<S>) -> Var,
{
    let mut graph = Graph::new();
    let loss = build(&mut graph, store);
    let grads = graph.backward(loss);
    let by_param: std::collections::BTreeMap<_, _> = grads.by_param().into_iter().collect();

    for &id in params {
        let analytic = by_param
            .get(&id)
            .cloned()
            .unwrap_or_else(|| ndarray::Array2::zeros(store.value(id).dim()));
        let dim = store.value(id).dim();
        for i in 0..dim.0 {
            for j in 0..dim.1 {
                let original = store.value(id)[[i, j]];
                let hs = S::from_f64_lossy(h);

                let mut plus = store.value(id).clone();
                plus[[i, j]] = original + hs;
                store.set_value(id, plus);
                let mut g_plus = Graph::new();
                let l_plus = build(&mut g_plus, store);
                let f_plus = g_plus.scalar_value(l_plus);

                let mut minus = store.value(id).clone();
                minus[[i, j]] = original - hs;
                store.set_value(id, minus);
                let mut g_minus = Graph::new();
                let l_minus = build(&mut g_minus, store);
                let f_minus = g_minus.scalar_value(l_minus);

                let mut restored = store.value(id).clone();
                restored[[i, j]] = original;
                store.set_value(id, restored);

                let fd = (f_plus - f_minus) / (hs + hs);
                let err = relative_error(analytic[[i, j]], fd);
                assert!(
                    err < tolerance,
                    "gradient mismatch for {} [{i},{j}]: analytic {:?}, fd {:?}, rel err {err}",
                    store.name(id),
                    analytic[[i, j]],
                    fd
                );
            }
        }
    }
}
