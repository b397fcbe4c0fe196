use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;

use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Receives the output gradient and a per-parent "needs gradient" mask, and
/// returns one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Work counters filled in by instrumented kernels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Attention score-matrix entries materialized.
    pub score_elements: u64,
    /// Multiply-accumulates spent computing those entries.
    pub score_macs: u64,
}

/// Records one forward pass. Single-threaded; freed after [`Var::backward`].
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
    finished: Cell<bool>,
    counters: Cell<Counters>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            finished: Cell::new(false),
            counters: Cell::new(Counters::default()),
        }
    }

    /// A tape that never records backward closures.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counters(&self) -> Counters {
        self.counters.get()
    }

    pub fn record_scores(&self, elements: u64, macs: u64) {
        let mut c = self.counters.get();
        c.score_elements += elements;
        c.score_macs += macs;
        self.counters.set(c);
    }

    fn push_leaf(&self, value: Tensor<T>, requires_grad: bool, param: Option<ParamId>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: requires_grad && self.grad_enabled,
            param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, false, None)
    }

    /// A leaf whose gradient is reported by [`Gradients::get`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, true, None)
    }

    /// Reads a stored parameter as-is (no runtime scaling).
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        let p = store.get(id);
        self.push_leaf(p.value.clone(), p.trainable, Some(id))
    }

    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: Option<BackwardFn<T>>,
    ) -> Result<Var<'_, T>> {
        value.ensure_finite(op)?;
        let mut nodes = self.nodes.borrow_mut();
        let parent_ids: Vec<usize> = parents
            .iter()
            .map(|p| {
                assert!(std::ptr::eq(p.tape, self), "vars from different tapes");
                p.id
            })
            .collect();
        let requires_grad = self.grad_enabled && parent_ids.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value,
            parents: if requires_grad { parent_ids } else { Vec::new() },
            backward: if requires_grad { backward } else { None },
            requires_grad,
            param: None,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn value_of(&self, id: usize) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(self) -> Var<'t, T> {
        self.tape.push_leaf(self.value(), false, None)
    }

    /// Runs reverse-mode accumulation from this scalar.
    pub fn backward(self) -> Result<Gradients<T>> {
        let tape = self.tape;
        if tape.finished.get() {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.shape();
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        if !self.requires_grad() {
            return Err(TensorError::Detached);
        }
        tape.finished.set(true);

        let mut nodes = tape.nodes.borrow_mut();
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.id + 1);
        grads.resize_with(self.id + 1, || None);
        grads[self.id] = Some(Tensor::ones(&shape));
        let mut out = Gradients {
            by_node: HashMap::new(),
            by_param: HashMap::new(),
        };

        for i in (0..=self.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &mut nodes[i];
            match node.backward.take() {
                Some(bw) => {
                    let parents = std::mem::take(&mut node.parents);
                    let needs: Vec<bool> = parents.iter().map(|&p| nodes[p].requires_grad).collect();
                    let pg = bw(&g, &needs);
                    debug_assert_eq!(pg.len(), parents.len());
                    for ((&p, gp), need) in parents.iter().zip(pg).zip(needs) {
                        if let (Some(gp), true) = (gp, need) {
                            debug_assert_eq!(gp.shape(), nodes[p].value.shape());
                            match &mut grads[p] {
                                Some(acc) => acc.add_assign(&gp),
                                slot => *slot = Some(gp),
                            }
                        }
                    }
                }
                None if node.requires_grad => {
                    if let Some(pid) = node.param {
                        match out.by_param.get_mut(&pid) {
                            Some(acc) => acc.add_assign(&g),
                            None => {
                                out.by_param.insert(pid, g.clone());
                            }
                        }
                    }
                    out.by_node.insert(i, g);
                }
                None => {}
            }
        }
        for node in nodes.iter_mut() {
            node.backward = None;
            node.parents = Vec::new();
        }
        Ok(out)
    }
}

/// Gradients of the leaves of one tape.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    by_node: HashMap<usize, Tensor<T>>,
    by_param: HashMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf created with [`Tape::leaf`] or [`Tape::param`].
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_node.get(&var.id)
    }

    /// Gradient with respect to a stored parameter, summed over every read.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.by_param.iter().map(|(&id, g)| (id, g))
    }

    pub fn into_params(self) -> HashMap<ParamId, Tensor<T>> {
        self.by_param
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[3], |i| i as f64));
        let loss = x.sum().unwrap();
        let g = loss.backward().unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gives_twice_x() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
        let loss = x.mul(x).unwrap().sum().unwrap();
        let g = loss.backward().unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn second_backward_is_an_error() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        let loss = x.sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(loss.backward().unwrap_err(), TensorError::BackwardTwice);
    }

    #[test]
    fn non_scalar_and_detached_losses_are_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        assert!(matches!(x.backward(), Err(TensorError::NonScalarLoss(_))));
        let c = tape.constant(Tensor::ones(&[2])).sum().unwrap();
        assert_eq!(c.backward().unwrap_err(), TensorError::Detached);
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        let y = x.detach().mul(x).unwrap().sum().unwrap();
        let g = y.backward().unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn parameter_reads_accumulate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap(), 1.0).unwrap();
        let tape = Tape::new();
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        let loss = a.add(b.scale(3.0).unwrap()).unwrap().sum().unwrap();
        let g = loss.backward().unwrap();
        assert_eq!(g.param(id).unwrap().data(), &[4.0, 4.0]);
    }

    #[test]
    fn inference_tape_records_no_gradients() {
        let tape = Tape::<f32>::inference();
        let x = tape.leaf(Tensor::ones(&[2]));
        assert!(!x.requires_grad());
        assert_eq!(x.sum().unwrap().backward().unwrap_err(), TensorError::Detached);
    }

    #[test]
    fn non_finite_results_surface_as_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[1], &[1e300]).unwrap());
        let err = x.mul(x).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
    }
}
