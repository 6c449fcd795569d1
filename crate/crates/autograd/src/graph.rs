//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] walks the tape in reverse and returns gradients for the
//! leaves that were created with [`Graph::leaf`]. Nodes whose inputs do not
//! require gradients never store a backward closure.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Computes gradients of the op's parents from the gradient of its output.
/// The slice flags which parents actually need a gradient.
pub(crate) type BackwardFn<S> = Box<dyn Fn(&Tensor<S>, &[bool]) -> Vec<Option<Tensor<S>>>>;

struct Node<S> {
    value: Rc<Tensor<S>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<S>>,
}

pub struct Graph<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> fmt::Debug for Graph<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Graph({} nodes)", self.nodes.borrow().len())
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, S: Scalar> {
    pub(crate) id: usize,
    pub(crate) graph: &'g Graph<S>,
}

impl<S: Scalar> fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<S>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            id: nodes.len() - 1,
            graph: self,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, t: Tensor<S>) -> Var<'_, S> {
        self.push(Node {
            value: Rc::new(t),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        })
    }

    /// A differentiable input.
    pub fn leaf(&self, t: Tensor<S>) -> Var<'_, S> {
        self.push(Node {
            value: Rc::new(t),
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
        })
    }

    pub fn scalar(&self, v: f64) -> Var<'_, S> {
        self.constant(Tensor::scalar(S::from_f64(v)))
    }

    pub(crate) fn push_op<'g>(
        &'g self,
        value: Rc<Tensor<S>>,
        parents: &[Var<'g, S>],
        backward: BackwardFn<S>,
    ) -> Var<'g, S> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        self.push(Node {
            value,
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then_some(backward),
        })
    }

    pub fn value(&self, v: Var<'_, S>) -> Rc<Tensor<S>> {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn requires_grad(&self, v: Var<'_, S>) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    /// Gradients of a one-element `root` with respect to every leaf.
    pub fn backward(&self, root: Var<'_, S>) -> Gradients<S> {
        let shape = self.value(root).shape().to_vec();
        assert_eq!(
            shape.iter().product::<usize>(),
            1,
            "backward() needs a one-element root, got {shape:?}"
        );
        self.backward_with(root, Tensor::full(&shape, S::one()))
    }

    /// Vector-Jacobian product seeded with `seed` at `root`.
    pub fn backward_with(&self, root: Var<'_, S>, seed: Tensor<S>) -> Gradients<S> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.id].value.shape(), seed.shape());
        let mut grads: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[root.id].requires_grad {
            grads[root.id] = Some(seed);
        }
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(bw) = &node.backward else { continue };
            let Some(g) = grads[id].take() else { continue };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let pgrads = bw(&g, &needs);
            debug_assert_eq!(pgrads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(pgrads).zip(needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "grad shape for node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        // only leaves keep their gradients
        for (id, node) in nodes.iter().enumerate() {
            if node.backward.is_some() {
                grads[id] = None;
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for `v`, or `None` if `v` is not a leaf or the root does not
    /// depend on it.
    pub fn get(&self, v: Var<'_, S>) -> Option<&Tensor<S>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zeros when the root does not depend on it.
    pub fn get_or_zeros(&self, v: Var<'_, S>) -> Tensor<S> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.graph.value(v).shape()))
    }

    pub fn take(&mut self, v: Var<'_, S>) -> Option<Tensor<S>> {
        self.grads.get_mut(v.id).and_then(|g| g.take())
    }
}

impl<'g, S: Scalar> Var<'g, S> {
    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<S>> {
        self.graph.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(*self)
    }

    /// Same value, cut off from the tape.
    pub fn detach(&self) -> Var<'g, S> {
        let v = self.value();
        self.graph.push(Node {
            value: v,
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        })
    }

    pub fn item(&self) -> S {
        self.value().item()
    }
}
