//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends one record to the tape holding its output value,
//! references to its inputs and a backward closure. [`Graph::backward`] walks
//! the records in exact reverse creation order, running each closure at most
//! once and summing gradients that reach the same node along several paths.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Inputs handed to a backward closure.
pub struct BackwardArgs<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    /// Whether each input needs a gradient; closures may skip work for `false`.
    pub needs: Vec<bool>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
}

pub type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Computation graph. Values live as long as the graph.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Scalar> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value().shape())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf node; `requires_grad` leaves collect gradients in [`Gradients`].
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        })
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Records an operation output. The backward closure is dropped when no
    /// input requires a gradient.
    pub fn record(&self, value: Tensor<T>, parents: &[Var<'_, T>], backward: BackwardFn<T>) -> Var<'_, T> {
        let parent_ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parent_ids.iter().any(|&p| nodes[p].requires_grad)
        };
        self.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: if requires_grad { parent_ids } else { Vec::new() },
            backward: requires_grad.then_some(backward),
        })
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Backpropagates from a single-element root with seed 1.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        let numel = root.value().numel();
        if numel != 1 {
            return Err(Error::Contract(format!(
                "backward root must hold one element, has {numel}"
            )));
        }
        self.backward_with_seed(root, Tensor::scalar(T::one()).reshape(root.value().shape())?)
    }

    pub fn backward_with_seed(&self, root: Var<'_, T>, seed: Tensor<T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if seed.shape() != nodes[root.id].value.shape() {
            return Err(Error::Contract(format!(
                "seed shape {:?} differs from root shape {:?}",
                seed.shape(),
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[root.id].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.id] = Some(seed);
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let args = BackwardArgs {
                inputs: node.parents.iter().map(|&p| nodes[p].value.as_ref()).collect(),
                needs: node.parents.iter().map(|&p| nodes[p].requires_grad).collect(),
                output: node.value.as_ref(),
                grad: &grad,
            };
            let input_grads = backward(&args);
            debug_assert_eq!(input_grads.len(), node.parents.len());
            for (&p, g) in node.parents.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[p].value.shape(), "gradient shape");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'g, T> {
        self.graph.constant(self.value().as_ref().clone())
    }
}

/// Gradients of leaf nodes after a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.take_id(var.id)
    }

    pub fn take_id(&mut self, id: usize) -> Option<Tensor<T>> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}
