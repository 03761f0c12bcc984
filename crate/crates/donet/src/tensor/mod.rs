//! Dense f64 tensors and a tape-based reverse-mode autodiff graph.
//!
//! A [`Tensor`] is a plain value (row-major data + shape) that optionally
//! carries the id of the graph node that produced it. All differentiable
//! operations are methods on [`Graph`]; the tape is append-only, parents
//! always precede children, and [`Graph::backward`] accumulates adjoints in
//! reverse node-id order so results are bit-reproducible.

mod conv;
mod graph;
mod norm;

pub use graph::{Gradients, Graph, NodeId};
pub use norm::{RunningStats, BN_EPS};

use crate::error::{Error, Result};

/// Forward-pass mode: batch statistics vs running statistics in batch norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense row-major f64 tensor.
///
/// Tensors attached to a graph must not be mutated; the type enforces this
/// by keeping its fields private and offering no in-place mutators.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    node: Option<NodeId>,
}

impl Tensor {
    /// Build a tensor from a shape and matching row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.is_empty() {
            return Err(Error::BadTensorData { shape, len: data.len() });
        }
        Ok(Tensor { shape, data, node: None })
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v], node: None }
    }

    /// All-zero tensor.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], node: None }
    }

    /// Constant-filled tensor.
    pub fn full(shape: Vec<usize>, v: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![v; numel], node: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Node id if this tensor was produced by (or registered with) a graph.
    pub fn node_id(&self) -> Option<NodeId> {
        self.node
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Same data under a new shape (value-level; drops any graph attachment).
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    /// Copy of the value without graph attachment.
    pub fn detached(&self) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.clone(), node: None }
    }

    /// Mutable access to the raw data for in-place updates (optimizers).
    /// Drops any graph attachment first, so a mutated tensor can never alias
    /// a tape node.
    pub fn data_mut(&mut self) -> &mut [f64] {
        self.node = None;
        &mut self.data
    }

    /// Consume into the raw data vector.
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn with_node(shape: Vec<usize>, data: Vec<f64>, node: NodeId) -> Self {
        Tensor { shape, data, node: Some(node) }
    }

    pub(crate) fn is_scalar_like(&self) -> bool {
        self.data.len() == 1
    }
}
