use std::cell::RefCell;
use std::rc::Rc;

use super::{Float, Tensor};

/// Backward closure: receives the output gradient and, per parent, whether
/// that parent needs a gradient. Returns one entry per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct NodeRec<T> {
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

type Nodes<T> = Rc<RefCell<Vec<NodeRec<T>>>>;

/// Records differentiable operations for one forward pass.
///
/// Only nodes that depend on a tracked leaf are recorded; everything else is
/// evaluated eagerly and costs nothing at backward time.
pub struct Tape<T: Float> {
    nodes: Nodes<T>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Rc::new(RefCell::new(Vec::new())),
        }
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(NodeRec {
                parents: Vec::new(),
                backward: None,
            });
            nodes.len() - 1
        };
        Var {
            tape: Some(self.nodes.clone()),
            id,
            value: Rc::new(value),
        }
    }

    /// Leaf without gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var::constant(value)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A value in the computation graph.
#[derive(Clone)]
pub struct Var<T: Float> {
    tape: Option<Nodes<T>>,
    id: usize,
    value: Rc<Tensor<T>>,
}

impl<T: Float> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.value.shape())
            .field("tracked", &self.tracked())
            .finish()
    }
}

impl<T: Float> Var<T> {
    /// Untracked value, usable with any tape.
    pub fn constant(value: Tensor<T>) -> Self {
        Self {
            tape: None,
            id: usize::MAX,
            value: Rc::new(value),
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn value_rc(&self) -> Rc<Tensor<T>> {
        self.value.clone()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.value.dim(axis)
    }

    pub fn tracked(&self) -> bool {
        self.tape.is_some()
    }

    pub fn id(&self) -> Option<usize> {
        self.tape.as_ref().map(|_| self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self {
            tape: None,
            id: usize::MAX,
            value: self.value.clone(),
        }
    }

    /// Builds the result of an operation over `parents`.
    pub(crate) fn from_op(
        value: Tensor<T>,
        parents: &[&Var<T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Self {
        let tape = parents.iter().find_map(|p| p.tape.clone());
        match tape {
            None => Self::constant(value),
            Some(nodes) => {
                for p in parents {
                    if let Some(t) = &p.tape {
                        assert!(
                            Rc::ptr_eq(t, &nodes),
                            "operands recorded on different tapes"
                        );
                    }
                }
                let ids = parents
                    .iter()
                    .map(|p| if p.tracked() { p.id } else { usize::MAX })
                    .collect();
                let id = {
                    let mut n = nodes.borrow_mut();
                    n.push(NodeRec {
                        parents: ids,
                        backward: Some(Box::new(backward)),
                    });
                    n.len() - 1
                };
                Self {
                    tape: Some(nodes),
                    id,
                    value: Rc::new(value),
                }
            }
        }
    }

    /// Reverse-mode sweep from this value, seeded with ones.
    pub fn backward(&self) -> Grads<T> {
        let seed = Tensor::full(self.shape(), T::one());
        self.backward_with(seed)
    }

    pub fn backward_with(&self, seed: Tensor<T>) -> Grads<T> {
        assert_eq!(seed.shape(), self.shape(), "seed shape mismatch");
        let Some(nodes) = &self.tape else {
            return Grads { grads: Vec::new() };
        };
        let nodes = nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[self.id] = Some(seed);
        for i in (0..=self.id).rev() {
            let rec = &nodes[i];
            let Some(bw) = &rec.backward else { continue };
            let Some(g) = grads[i].take() else { continue };
            let needs: Vec<bool> = rec.parents.iter().map(|&p| p != usize::MAX).collect();
            if !needs.iter().any(|&b| b) {
                continue;
            }
            let pg = bw(&g, &needs);
            debug_assert_eq!(pg.len(), rec.parents.len());
            for (&p, pgrad) in rec.parents.iter().zip(pg) {
                if p == usize::MAX {
                    continue;
                }
                if let Some(pgrad) = pgrad {
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&pgrad),
                        slot @ None => *slot = Some(pgrad),
                    }
                }
            }
        }
        Grads { grads }
    }
}

/// Gradients of leaves after a backward sweep.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Grads<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        v.id()
            .and_then(|id| self.grads.get(id))
            .and_then(|g| g.as_ref())
    }

    /// Gradient or zeros when the leaf did not influence the root.
    pub fn get_or_zeros(&self, v: &Var<T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.shape()))
    }

    pub fn take(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        v.id()
            .and_then(|id| self.grads.get_mut(id))
            .and_then(|g| g.take())
    }
}
