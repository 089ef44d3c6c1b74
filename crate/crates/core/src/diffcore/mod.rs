//! Reverse-mode differentiation over small dense networks.
//!
//! A [`Graph`] is built symbolically from leaves (parameter vectors and
//! data inputs), evaluated against [`Bindings`], and differentiated by a
//! single reverse sweep. Parameters are flat `1 x n` rows; layers are
//! recovered with [`Graph::slice`], so a parameter *expression* such as
//! `theta + lr * (returns . score)` can stand in anywhere a parameter leaf
//! could. That is what lets a loss evaluated under updated policy
//! parameters be differentiated back to the incentive parameters that
//! shaped the update.

mod graph;
mod tensor;

pub use graph::{
    log_sum_exp, sigmoid, softmax_in_place, Adjoints, Bindings, Graph, LeafKind, NodeId, Values,
};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("non-finite value produced at node {node}")]
    NumericOverflow { node: String },
    #[error("leaf {leaf} is not bound")]
    UnboundLeaf { leaf: String },
    #[error("update expression {update} has no path from {wrt}")]
    DetachedUpdate { update: String, wrt: String },
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Central finite differences of a scalar function, step `h` per coordinate.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)` taken over the whole vector (l2 norms).
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
