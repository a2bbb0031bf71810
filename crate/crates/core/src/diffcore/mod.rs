//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order, so [`Graph::backward`] is a single reverse sweep over the
//! tape. Values are rank-2 arrays (`rows × cols`); scalars are `1 × 1` and
//! vectors are single rows. Elementwise operations broadcast only between a
//! `1 × 1` operand and an array of any shape.
//!
//! Graphs are cheap, short-lived objects: a training step binds the current
//! parameter arrays as leaves, builds the loss, runs `backward`, reads the
//! gradients and drops the graph.

mod check;
mod ops;

pub use check::{gradient_check, GradCheckReport, ParamCheck};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`]'s tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: Axis,
    },
    Slice {
        src: NodeId,
        axis: Axis,
        start: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
    Square(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Relu(NodeId),
    Clamp {
        src: NodeId,
        lo: f64,
        hi: f64,
    },
}

pub(crate) struct Node {
    pub(crate) value: Array2<f64>,
    pub(crate) grad: Option<Array2<f64>>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// A computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Single-row constant.
    pub fn row(&mut self, values: &[f64]) -> NodeId {
        self.constant(Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap())
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.dim()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Accumulated gradient; `None` when the node is not differentiable or was
    /// not reached by any backward pass yet.
    pub fn grad(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Gradient with zeros substituted for unreached differentiable nodes.
    pub fn grad_or_zeros(&self, id: NodeId) -> Array2<f64> {
        match &self.nodes[id.0].grad {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shape(id)),
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Accumulates `d loss / d node` into every differentiable node reachable
    /// from `loss`. Calling it twice without [`Graph::zero_grad`] adds the
    /// gradients of both calls.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss { shape });
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        // Seeds live in a scratch buffer so a repeated call accumulates on top
        // of previous results instead of mixing with this sweep's partials.
        let mut pending: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=loss.0).rev() {
            let Some(upstream) = pending[idx].take() else {
                continue;
            };
            ops::propagate(&self.nodes, idx, &upstream, &mut pending);
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(g) => *g += &upstream,
                None => node.grad = Some(upstream),
            }
        }
        Ok(())
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        id
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }
}
