use std::collections::{HashMap, HashSet};

use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// The differentiable part of a computation, in topological order.
///
/// Every entry's parents appear before it. Only tensors that require grad
/// are recorded; constants never enter the tape.
pub struct Tape<F: Scalar> {
    nodes: Vec<Tensor<F>>,
}

impl<F: Scalar> Tape<F> {
    /// Collects everything reachable from `root` through differentiable edges.
    pub fn record(root: &Tensor<F>) -> Self {
        let mut nodes = Vec::new();
        if !root.requires_grad() {
            return Tape { nodes };
        }
        let mut visited = HashSet::new();
        // (tensor, index of next parent to visit)
        let mut stack: Vec<(Tensor<F>, usize)> = vec![(root.clone(), 0)];
        visited.insert(root.node_id());
        while let Some((t, next)) = stack.pop() {
            let parents = t.grad_fn().map(|g| g.parents.as_slice()).unwrap_or(&[]);
            let pending = parents[next.min(parents.len())..]
                .iter()
                .position(|p| p.requires_grad() && !visited.contains(&p.node_id()))
                .map(|off| next + off);
            match pending {
                Some(pi) => {
                    let parent = parents[pi].clone();
                    stack.push((t, pi + 1));
                    visited.insert(parent.node_id());
                    stack.push((parent, 0));
                }
                None => nodes.push(t),
            }
        }
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Tensor<F>] {
        &self.nodes
    }

    /// Operation names in recorded order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|t| t.op_name()).collect()
    }

    /// Propagates `seed` (the adjoint of the last node) back to the leaves.
    fn run(&self, seed: Vec<F>) {
        let Some(root) = self.nodes.last() else {
            return;
        };
        let mut adjoints: HashMap<usize, Vec<F>> = HashMap::new();
        adjoints.insert(root.node_id(), seed);
        for node in self.nodes.iter().rev() {
            let Some(g) = adjoints.remove(&node.node_id()) else {
                continue;
            };
            match node.grad_fn() {
                None => node.accumulate_grad(&g),
                Some(gf) => {
                    let parent_grads = (gf.backward)(node.data(), &g);
                    debug_assert_eq!(parent_grads.len(), gf.parents.len(), "{}", gf.name);
                    for (parent, pg) in gf.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel(), "{}", gf.name);
                        match adjoints.get_mut(&parent.node_id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                            None => {
                                adjoints.insert(parent.node_id(), pg);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<F: Scalar> Tensor<F> {
    /// Accumulates d(self)/d(leaf) into every differentiable leaf. Repeated
    /// calls add to existing gradients until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        Tape::record(self).run(vec![F::one()]);
        Ok(())
    }
}
