use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use super::{Elem, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static LIVE_BYTES: Cell<usize> = const { Cell::new(0) };
    static PEAK_BYTES: Cell<usize> = const { Cell::new(0) };
}

/// Bytes currently held by graph node values on this thread.
pub fn live_bytes() -> usize {
    LIVE_BYTES.with(Cell::get)
}

/// High-water mark of [`live_bytes`] since the last [`reset_peak_bytes`].
pub fn peak_bytes() -> usize {
    PEAK_BYTES.with(Cell::get)
}

pub fn reset_peak_bytes() {
    PEAK_BYTES.with(|p| p.set(live_bytes()));
}

fn track_alloc(bytes: usize) {
    let live = LIVE_BYTES.with(|l| {
        let v = l.get() + bytes;
        l.set(v);
        v
    });
    PEAK_BYTES.with(|p| p.set(p.get().max(live)));
}

type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

pub(crate) struct GradFn<T: Elem> {
    name: &'static str,
    parents: Vec<Var<T>>,
    apply: BackwardFn<T>,
}

struct Node<T: Elem> {
    id: u64,
    value: Tensor<T>,
    grad: RefCell<Option<Vec<T>>>,
    grad_fn: Option<GradFn<T>>,
}

impl<T: Elem> Drop for Node<T> {
    fn drop(&mut self) {
        let bytes = self.value.len() * std::mem::size_of::<T>();
        LIVE_BYTES.with(|l| l.set(l.get().saturating_sub(bytes)));
    }
}

/// Handle to a value in the computation graph.
///
/// Cloning is cheap (reference counted). Graphs are confined to the thread
/// that built them.
pub struct Var<T: Elem = f32>(Rc<Node<T>>);

impl<T: Elem> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Elem> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.name))
            .finish()
    }
}

impl<T: Elem> Var<T> {
    fn new(mut value: Tensor<T>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        value.grad = None;
        value.requires_grad = requires_grad;
        track_alloc(value.len() * std::mem::size_of::<T>());
        let id = NEXT_ID.with(|c| {
            let id = c.get();
            c.set(id + 1);
            id
        });
        Var(Rc::new(Node {
            id,
            value,
            grad: RefCell::new(None),
            grad_fn,
        }))
    }

    /// Graph input; tracks a gradient iff the tensor's `requires_grad` flag is set.
    pub fn leaf(value: Tensor<T>) -> Self {
        let rg = value.requires_grad();
        Self::new(value, rg, None)
    }

    pub fn parameter(value: Tensor<T>) -> Self {
        Self::new(value, true, None)
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Self::new(value, false, None)
    }

    /// Result of a differentiable op. The backward closure maps the output
    /// gradient to one optional gradient per parent; it is only kept when
    /// some parent requires a gradient.
    pub(crate) fn from_op(
        value: Tensor<T>,
        name: &'static str,
        parents: Vec<Var<T>>,
        apply: impl Fn(&[T]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        if parents.iter().any(Var::requires_grad) {
            let grad_fn = GradFn {
                name,
                parents,
                apply: Box::new(apply),
            };
            Self::new(value, true, Some(grad_fn))
        } else {
            Self::new(value, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn data(&self) -> &[T] {
        self.0.value.data()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.value.requires_grad()
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    /// Accumulated gradient of a leaf after [`Var::backward`].
    pub fn grad(&self) -> Option<Ref<'_, Vec<T>>> {
        Ref::filter_map(self.0.grad.borrow(), Option::as_ref).ok()
    }

    pub fn grad_vec(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the value detached from the graph.
    pub fn to_tensor(&self) -> Tensor<T> {
        let mut t = self.0.value.clone();
        t.requires_grad = false;
        t
    }

    /// Reverse-mode accumulation from a scalar. Leaf gradients add up across
    /// repeated calls until [`Var::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.0.value.len() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let graph = ComputationGraph::collect(self);
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for node in graph.nodes.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                Some(gf) => {
                    let parent_grads = (gf.apply)(&g);
                    debug_assert_eq!(parent_grads.len(), gf.parents.len(), "{}", gf.name);
                    for (parent, pg) in gf.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.value().len(), "{}", gf.name);
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a = *a + b),
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }
}

/// Summary of one recorded operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub id: u64,
    pub op: Option<&'static str>,
    pub inputs: Vec<u64>,
}

/// The gradient-carrying subgraph reachable from a root, in topological order.
pub struct ComputationGraph<T: Elem> {
    nodes: Vec<Var<T>>,
}

impl<T: Elem> ComputationGraph<T> {
    pub fn collect(root: &Var<T>) -> Self {
        let mut seen = HashSet::new();
        let mut nodes = Vec::new();
        let mut stack = vec![root.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            if let Some(gf) = &v.0.grad_fn {
                stack.extend(gf.parents.iter().cloned());
            }
            nodes.push(v);
        }
        // Ids are handed out at creation, so inputs always have smaller ids.
        nodes.sort_by_key(Var::id);
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn records(&self) -> Vec<GraphNode> {
        self.nodes
            .iter()
            .map(|v| GraphNode {
                id: v.id(),
                op: v.op_name(),
                inputs: v
                    .0
                    .grad_fn
                    .as_ref()
                    .map(|g| g.parents.iter().map(Var::id).collect())
                    .unwrap_or_default(),
            })
            .collect()
    }
}
