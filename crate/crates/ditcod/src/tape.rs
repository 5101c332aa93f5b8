//! Reverse-mode autodiff tape.
//!
//! Every differentiable op is a method on [`Tape`] (see the `ops` module).
//! An op computes its output eagerly and records a backward closure that
//! maps the output gradient to gradients of its inputs. Nodes are appended
//! in execution order, so a single reverse sweep visits each node once.
//! Tensor data is `Arc`-backed, so closures capture input values cheaply.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) type BackwardFn<S> = Box<dyn Fn(&Tensor<S>) -> Vec<(usize, Tensor<S>)>>;

pub(crate) struct Node<S> {
    pub value: Tensor<S>,
    pub back: Option<BackwardFn<S>>,
    pub needs_grad: bool,
}

pub struct Tape<S: Scalar> {
    pub(crate) nodes: Vec<Node<S>>,
}

/// Gradients produced by one backward sweep, indexed by tape node.
pub struct Grads<S> {
    by_node: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.by_node[v.0].as_ref()
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop all recorded nodes.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Register an input. `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, None, requires_grad)
    }

    /// Register a value that never receives gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, None, false)
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, back: Option<BackwardFn<S>>, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, back: if needs_grad { back } else { None }, needs_grad });
        Var(id)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub(crate) fn needs_grad(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Reverse sweep from a scalar root. Returns gradients for every node
    /// reachable from the root that requires grad.
    pub fn backward(&self, root: Var) -> Result<Grads<S>> {
        let root_val = &self.nodes[root.0].value;
        if root_val.len() != 1 {
            return Err(Error::invalid(format!(
                "backward root must be scalar, got shape {:?}",
                root_val.shape()
            )));
        }
        if !root_val.all_finite() {
            return Err(Error::NonFinite("backward root".into()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(S::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(back) = node.back.as_ref() else { continue };
            let Some(gout) = grads[i].clone() else { continue };
            for (j, gj) in back(&gout) {
                debug_assert!(j < i, "tape not topological: {} -> {}", i, j);
                match &mut grads[j] {
                    Some(acc) => {
                        let sum = acc.zip(&gj, |a, b| a + b)?;
                        *acc = sum;
                    }
                    slot @ None => *slot = Some(gj),
                }
            }
        }
        Ok(Grads { by_node: grads })
    }
}
