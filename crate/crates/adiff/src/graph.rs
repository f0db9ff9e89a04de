//! Reverse-mode differentiation over a record of executed operations.
//!
//! Nodes are appended in execution order, which is therefore already a
//! topological order; backward walks the record once in reverse. Each
//! operation stores a closure that maps the output gradient to per-input
//! gradient contributions, and the driver accumulates them.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Gradient contributions to parent nodes, keyed by node index.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<(usize, Vec<T>)>>;

pub(crate) struct Node<T: Scalar> {
    pub value: Tensor<T>,
    pub needs_grad: bool,
    pub backward: Option<BackwardFn<T>>,
    pub grad: Option<Tensor<T>>,
}

#[derive(Default)]
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Input node. Gradients flow into it only when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, requires_grad, None)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor<T>,
        needs_grad: bool,
        backward: Option<BackwardFn<T>>,
    ) -> NodeId {
        self.nodes.push(Node { value, needs_grad, backward, grad: None });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn any_needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// Populate gradients of every grad-requiring node reachable from `loss`.
    pub fn backward(&mut self, loss: NodeId) {
        let loss_value = &self.nodes[loss.0].value;
        assert_eq!(
            loss_value.numel(),
            1,
            "backward needs a scalar loss, got shape {}",
            loss_value.shape_string()
        );
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::ONE]);
        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            if let Some(backward) = &self.nodes[id].backward {
                for (parent, contribution) in backward(&grad) {
                    debug_assert!(parent < id, "gradient sent forward in the record");
                    if !self.nodes[parent].needs_grad {
                        continue;
                    }
                    match &mut grads[parent] {
                        Some(acc) => {
                            debug_assert_eq!(acc.len(), contribution.len());
                            for (a, c) in acc.iter_mut().zip(&contribution) {
                                *a += *c;
                            }
                        }
                        slot => *slot = Some(contribution),
                    }
                }
            }
            let shape = self.nodes[id].value.shape().to_vec();
            self.nodes[id].grad = Some(Tensor::new(shape, grad));
        }
    }
}
