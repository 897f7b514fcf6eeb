use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use crate::{Element, Result, Tensor, TensorError};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Disables graph recording until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(false));
        NoGradGuard { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Runs `f` without recording any ops.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = NoGradGuard::new();
    f()
}

impl<T: Element> Tensor<T> {
    /// Back-propagates from this scalar and accumulates gradients into every
    /// reachable leaf with `requires_grad`.
    pub fn backward(&self) -> Result<()> {
        if !self.shape().is_scalar() {
            return Err(TensorError::NonScalarLoss(self.shape()));
        }
        if !self.requires_grad() {
            return Err(TensorError::Detached);
        }

        let order = topo_order(self);
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);

        for node in order.iter().rev() {
            let Some(grad_out) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => node.accumulate_grad(&grad_out),
                Some(gf) => {
                    let grads = {
                        let out = node.values();
                        (gf.backward)(&grad_out, &out)
                    };
                    debug_assert_eq!(grads.len(), gf.parents.len(), "{}: grad arity", gf.op);
                    for (parent, g) in gf.parents.iter().zip(grads) {
                        let Some(g) = g else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.len(), parent.numel(), "{}: grad length", gf.op);
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                            None => {
                                pending.insert(parent.id(), g);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Post-order over nodes that require grad; the root comes last.
fn topo_order<T: Element>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    // (node, children_pushed)
    let mut stack = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        if let Some(gf) = &node.0.grad_fn {
            for p in &gf.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    order
}
