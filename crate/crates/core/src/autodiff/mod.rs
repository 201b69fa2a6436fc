//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in creation
//! order, which is already a topological order: an operation can only consume
//! nodes that exist when it is recorded. [`Graph::backward`] walks that order
//! in reverse exactly once.
//!
//! Gradients accumulate across repeated `backward` calls until
//! [`Graph::zero_grad`] is invoked; resetting is the caller's job.

mod gradcheck;
mod primitives;

use std::cell::RefCell;
use std::fmt;

pub use gradcheck::{check_gradient, check_gradient_sampled, GradientReport};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Backward rule of a recorded operation.
///
/// Receives the upstream gradient, the input values and the output value and
/// returns one optional gradient buffer per input (same length as that input).
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[Tensor], &Tensor) -> Vec<Option<Vec<f64>>>>;

struct Node {
    op: &'static str,
    value: Tensor,
    inputs: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(Node { op: "leaf", value, inputs: Vec::new(), requires_grad, backward: None })
    }

    /// Gradient-tracking leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record an operation. The backward rule is dropped when no input tracks gradients.
    pub(crate) fn record<'g>(
        &'g self,
        op: &'static str,
        inputs: &[Var<'g>],
        value: Tensor,
        backward: BackwardFn,
    ) -> Var<'g> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        self.push(Node {
            op,
            value,
            inputs: inputs.iter().map(|v| v.id).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
        })
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        self.grads.borrow_mut().push(None);
        Var { graph: self, id: nodes.len() - 1 }
    }

    pub fn value(&self, var: Var<'_>) -> Tensor {
        self.nodes.borrow()[var.id].value.clone()
    }

    pub fn requires_grad(&self, var: Var<'_>) -> bool {
        self.nodes.borrow()[var.id].requires_grad
    }

    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let shape = self.nodes.borrow()[var.id].value.shape().to_vec();
        self.grads.borrow()[var.id]
            .as_ref()
            .map(|g| Tensor::from_parts(shape, g.clone()))
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }

    /// Populate `d loss / d node` for every gradient-tracking node reachable from `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Ok(());
        }

        // Per-pass buffers; persisted into `self.grads` once each node is final.
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        pass[loss.id] = Some(vec![1.0]);
        let mut stored = self.grads.borrow_mut();

        for id in (0..=loss.id).rev() {
            let Some(grad) = pass[id].take() else { continue };
            let node = &nodes[id];
            if let Some(rule) = &node.backward {
                let inputs: Vec<Tensor> =
                    node.inputs.iter().map(|&i| nodes[i].value.clone()).collect();
                let input_grads = rule(&grad, &inputs, &node.value);
                debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
                for (&input, g) in node.inputs.iter().zip(input_grads) {
                    let Some(g) = g else { continue };
                    if !nodes[input].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(g.len(), nodes[input].value.len(), "op {}", node.op);
                    accumulate(&mut pass[input], g);
                }
            }
            accumulate(&mut stored[id], grad);
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.graph.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.graph.grad(*self)
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(*self)
    }

    pub fn backward(&self) -> Result<()> {
        self.graph.backward(*self)
    }
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes = self.graph.nodes.borrow();
        let node = &nodes[self.id];
        write!(f, "Var#{}({}, {:?})", self.id, node.op, node.value.shape())
    }
}
