//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only list of nodes; a node's inputs always have
//! smaller ids, so reverse id order is a valid topological order for the
//! backward sweep. Graphs are rebuilt for every forward pass.

mod backward;
pub mod gradcheck;
pub(crate) mod kernels;
mod ops;
pub(crate) mod shape;

use std::cell::RefCell;

pub use gradcheck::{grad_check, GradCheck};
pub use ops::{BatchNormMode, BatchStats};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use ops::Op;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// Deliberate defects used as negative controls for the gradient checker.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// Scale the tanh derivative by 1.5 in the backward pass.
    pub corrupt_tanh_backward: bool,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    faults: Faults,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_faults(faults: Faults) -> Self {
        Self {
            nodes: RefCell::default(),
            faults,
        }
    }

    pub fn faults(&self) -> Faults {
        self.faults
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node { value, op, requires_grad });
        Var { graph: self, id }
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Apply one primitive by id. The typed methods on [`Var`] are the usual
    /// entry points; this exists for table-driven callers such as the
    /// gradient-check suite.
    pub fn apply<'g>(&'g self, prim: &Primitive, inputs: &[Var<'g>]) -> Result<Var<'g>> {
        let arity = match prim {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div | Primitive::MatMul => 2,
            Primitive::Concat { .. } => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::invalid(prim.name(), format!("expected {arity} inputs, got {}", inputs.len())));
        }
        let x = inputs[0];
        match prim {
            Primitive::Add => x.add(inputs[1]),
            Primitive::Sub => x.sub(inputs[1]),
            Primitive::Mul => x.mul(inputs[1]),
            Primitive::Div => x.div(inputs[1]),
            Primitive::MatMul => x.matmul(inputs[1]),
            Primitive::Sum { axis } => x.sum(*axis),
            Primitive::Mean { axis } => x.mean(*axis),
            Primitive::Max { axis } => x.max(*axis),
            Primitive::Exp => Ok(x.exp()),
            Primitive::Log => Ok(x.log()),
            Primitive::Sqrt => Ok(x.sqrt()),
            Primitive::Square => Ok(x.square()),
            Primitive::Abs => Ok(x.abs()),
            Primitive::Negate => Ok(x.neg()),
            Primitive::Reshape(shape) => x.reshape(shape),
            Primitive::Transpose(perm) => x.permute(perm),
            Primitive::Concat { axis } => Var::concat(inputs, *axis),
            Primitive::Slice { axis, start, len } => x.slice(*axis, *start, *len),
            Primitive::Tanh => Ok(x.tanh()),
            Primitive::Sigmoid => Ok(x.sigmoid()),
            Primitive::Relu => Ok(x.relu()),
            Primitive::Softmax { axis } => x.softmax(*axis),
            Primitive::L2Norm { axis } => x.l2norm(*axis),
        }
    }

    /// Reverse sweep from a `[1]`-shaped loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let shape = loss.shape();
        if shape != [1] {
            return Err(Error::NonScalarLoss(shape));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id.0 + 1];
        if nodes[loss.id.0].requires_grad {
            grads[loss.id.0] = Some(vec![1.0]);
        }
        let mut leaves: Vec<Option<Tensor>> = vec![None; nodes.len()];
        for id in (0..=loss.id.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Op::Leaf = node.op {
                leaves[id] = Some(Tensor::from_vec(node.value.shape(), g)?);
                continue;
            }
            backward::propagate(&nodes, id, &g, &mut grads, self.faults);
        }
        Ok(Gradients { leaves })
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.with_value(self.id, |t| t.shape().to_vec())
    }

    pub fn value(&self) -> Tensor {
        self.graph.with_value(self.id, Tensor::clone)
    }

    pub fn item(&self) -> f64 {
        self.graph.with_value(self.id, |t| t.data()[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id.0].requires_grad
    }

    /// Same value, cut out of the backward graph.
    pub fn detach(self) -> Var<'g> {
        self.graph.constant(self.value())
    }
}

/// Gradients of a loss with respect to the leaves of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.leaves.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros of its shape when the loss does not reach it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.get(var.id) {
            Some(t) => t.clone(),
            None => Tensor::zeros(&var.shape()).expect("node shapes are valid"),
        }
    }
}

/// Primitive identifiers accepted by [`Graph::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Sum { axis: usize },
    Mean { axis: usize },
    Max { axis: usize },
    Exp,
    Log,
    Sqrt,
    Square,
    Abs,
    Negate,
    Reshape(Vec<usize>),
    Transpose(Vec<usize>),
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Tanh,
    Sigmoid,
    Relu,
    Softmax { axis: usize },
    L2Norm { axis: usize },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::MatMul => "matmul",
            Primitive::Sum { .. } => "sum",
            Primitive::Mean { .. } => "mean",
            Primitive::Max { .. } => "max",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Sqrt => "sqrt",
            Primitive::Square => "square",
            Primitive::Abs => "abs",
            Primitive::Negate => "negate",
            Primitive::Reshape(_) => "reshape",
            Primitive::Transpose(_) => "transpose",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Relu => "relu",
            Primitive::Softmax { .. } => "softmax",
            Primitive::L2Norm { .. } => "l2norm",
        }
    }
}
