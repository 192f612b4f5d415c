//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! The graph is an append-only arena: node ids increase in creation order,
//! so a reverse scan is already a topological order for backpropagation.
//! Ops execute eagerly; each op node stores whatever context its backward
//! pass needs (pooling argmax, batch-norm statistics, conv geometry).

use crate::tensor::Tensor;

mod conv;
mod elementwise;
mod norm;
mod pool;

#[cfg(test)]
mod op_tests;

pub use conv::{conv2d, conv_transpose2d};
pub use elementwise::{
    add, affine, atan, bce_with_logits, bce_with_logits_pair, binary_max, binary_min, clamp01,
    concat_channels, div, gather, l1_loss, mean_all, mse_loss, mul, relu, scatter, sigmoid, silu,
    sqrt, square, sub, sum_all,
};
pub use norm::{batch_norm, linear, scale_channels, BatchNormOut};
pub use pool::{global_avg_pool, max_pool2d, space_to_depth2, upsample_nearest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

pub(crate) trait GradFn {
    /// Compute gradients w.r.t. each parent. `needs[i]` is false when the
    /// i-th parent gradient would be discarded; implementations may return
    /// `None` there to skip the work.
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    parents: Vec<NodeId>,
    grad_fn: Option<Box<dyn GradFn>>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Constant input: no gradient is tracked through it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.insert(value, false)
    }

    /// Trainable input: `backward` will produce a gradient for it.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.insert(value, true)
    }

    fn insert(&mut self, value: Tensor, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            grad_fn: None,
            needs_grad,
        });
        id
    }

    pub(crate) fn push_op(
        &mut self,
        value: Tensor,
        parents: Vec<NodeId>,
        grad_fn: Box<dyn GradFn>,
    ) -> NodeId {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            parents,
            grad_fn: Some(grad_fn),
            needs_grad,
        });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop stored activations for nodes in `from..to` that are not listed in
    /// `keep`. Inference-only memory relief; backward through a trimmed
    /// region would read freed values, so callers must not mix the two.
    pub fn trim_values(&mut self, from: usize, to: usize, keep: &[NodeId]) {
        for i in from..to.min(self.nodes.len()) {
            if keep.iter().any(|k| k.0 == i) {
                continue;
            }
            self.nodes[i].value = Tensor::zeros(&[0]);
        }
    }

    /// Backpropagate from a scalar node. Returns per-node gradients; only
    /// leaves created with [`Graph::param`] retain theirs.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(
            self.nodes[root.0].value.numel(),
            1,
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if node.grad_fn.is_none() || !node.needs_grad {
                continue;
            }
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let grad_fn = node.grad_fn.as_deref().unwrap();
            let inputs: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].needs_grad).collect();
            let parent_grads = grad_fn.backward(&grad, &inputs, &node.value, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (parent, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[parent.0].value.shape());
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}
