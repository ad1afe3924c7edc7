//! Dense f64 tensors with reverse-mode differentiation.
//!
//! Operations are recorded on a [`Graph`] (a Wengert tape); `backward` replays
//! the tape in reverse creation order, which is a reverse topological order
//! because every op only refers to earlier nodes. Gradients accumulate
//! additively over fan-out.
//!
//! Everything is f64 and row-major. Finite-difference checks are unreliable in
//! f32, and at desk scale the speed difference does not matter.

mod backward;
mod ops;

pub mod archive;
pub mod gradcheck;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape error: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("{op}: contract violation: {detail}")]
    Contract { op: &'static str, detail: String },
    #[error("{op}: degenerate input: {detail}")]
    Degenerate { op: &'static str, detail: String },
    #[error("cross_entropy: target {target} outside the class set")]
    InvalidTarget { target: usize },
}

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

/// One recorded tensor: value, shape, and (after `backward`) its gradient.
#[derive(Debug)]
pub struct Tensor {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

impl Tensor {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// How a node was produced, with whatever state its backward rule needs.
#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    /// `a` is [.., k] (leading dims flattened), `b` is [k, n].
    Matmul { a: TensorId, b: TensorId },
    /// Batched [n, m, k] x [n, k, p].
    Bmm { a: TensorId, b: TensorId },
    /// `b`'s shape is a suffix of `a`'s; `b` is tiled over the leading dims.
    Add { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { a: TensorId, c: f64 },
    Concat { parts: Vec<TensorId>, axis: usize },
    Slice { a: TensorId, axis: usize, start: usize },
    /// Row gather from a [v, d] table; backward scatter-adds.
    Gather { table: TensorId, idx: Vec<usize> },
    /// Per-row gather along the last axis of `a`.
    GatherPerRow { a: TensorId, idx: Vec<usize>, k: usize },
    Softmax { a: TensorId, axis: usize },
    LayerNorm { a: TensorId, gain: TensorId, bias: TensorId, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu { a: TensorId },
    Sigmoid { a: TensorId },
    Reshape { a: TensorId },
    Permute { a: TensorId, perm: Vec<usize> },
    MeanAxis { a: TensorId, axis: usize },
    SumAxis { a: TensorId, axis: usize },
    SumAll { a: TensorId },
    /// Row-wise outer product [b, m] x [b, n] -> [b, m*n].
    Outer { a: TensorId, b: TensorId },
    /// Rows normalized to unit L2 norm; saves the pre-normalization norms.
    L2NormalizeRows { a: TensorId, norms: Vec<f64> },
    /// `a` is [.., n], `s` matches the leading dims; row r scaled by s[r].
    ScaleRows { a: TensorId, s: TensorId },
    /// Tile over a new leading axis of the given extent.
    ExpandLeading { a: TensorId, copies: usize },
    /// Pair head: y[b, i*n_obj + j] = z[b,i]*wa[i,j] + z[b,n_attr+j]*wo[j,i].
    SparseCompose { z: TensorId, wa: TensorId, wo: TensorId, n_attr: usize, n_obj: usize },
    /// Mean negative log-softmax over a (possibly restricted) class set.
    CrossEntropy { logits: TensorId, targets: Vec<usize>, subset: Option<Vec<usize>>, probs: Vec<f64> },
}

/// Recording graph. One forward pass per graph; `backward` may be called once
/// the loss node exists. Immutable after recording, so `&Graph` is safe to
/// share across threads.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Tensor>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0]
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Insert a leaf tensor. Shape/data length must agree; in debug builds the
    /// values are policed for NaN/Inf.
    pub fn leaf(
        &mut self,
        data: Vec<f64>,
        shape: &[usize],
        requires_grad: bool,
    ) -> Result<TensorId, TensorError> {
        if numel(shape) != data.len() {
            return Err(TensorError::Shape {
                op: "leaf",
                detail: format!("shape {:?} implies {} values, got {}", shape, numel(shape), data.len()),
            });
        }
        self.push("leaf", data, shape.to_vec(), requires_grad, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Result<TensorId, TensorError> {
        self.leaf(vec![value], &[1], false)
    }

    pub(crate) fn push(
        &mut self,
        opname: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        op: Op,
    ) -> Result<TensorId, TensorError> {
        debug_assert_eq!(numel(&shape), data.len());
        if cfg!(debug_assertions) && data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: opname });
        }
        self.nodes.push(Tensor { data, shape, requires_grad, grad: None, op });
        Ok(TensorId(self.nodes.len() - 1))
    }

    pub(crate) fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Lazily allocate and accumulate into a node's gradient buffer.
    pub(crate) fn accumulate(&mut self, id: TensorId, contrib: &[f64]) {
        let node = &mut self.nodes[id.0];
        debug_assert_eq!(node.data.len(), contrib.len());
        let grad = node.grad.get_or_insert_with(|| vec![0.0; contrib.len()]);
        for (g, c) in grad.iter_mut().zip(contrib) {
            *g += c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let err = g.leaf(vec![1.0, 2.0, 3.0], &[2, 2], false).unwrap_err();
        assert!(matches!(err, TensorError::Shape { .. }));
    }

    #[cfg(debug_assertions)]
    #[test]
    fn leaf_polices_non_finite() {
        let mut g = Graph::new();
        let err = g.leaf(vec![1.0, f64::NAN], &[2], false).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[5]), vec![1]);
    }
}
