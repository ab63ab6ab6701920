//! Layers, backbone block families and the backbone builder.
//!
//! Parameters live in a flat [`ParamStore`] owned by the model; layers are
//! small index structs. A [`Ctx`] binds stored tensors into the autodiff
//! graph for one forward pass and hands back [`Bindings`] so gradients can be
//! written into the store after `backward`.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::tensor::ops::Mode;
use crate::tensor::{Elem, Tensor, Var};

mod backbone;
pub mod blocks;
pub mod init;
pub mod layers;
pub mod presets;

pub use backbone::{build_backbone, Backbone, BackboneArch, BackboneSpec, Family, ScalePreset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    /// Trainable, receives gradients.
    Param,
    /// Persistent state such as batchnorm running statistics.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Entry<T: Elem> {
    pub name: String,
    pub kind: EntryKind,
    pub tensor: Tensor<T>,
}

/// Named tensors of one model, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Elem> {
    entries: Vec<Entry<T>>,
}

impl<T: Elem> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add_param(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.push(name.into(), EntryKind::Param, tensor.with_requires_grad(true))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.push(name.into(), EntryKind::Buffer, tensor.with_requires_grad(false))
    }

    fn push(&mut self, name: String, kind: EntryKind, tensor: Tensor<T>) -> ParamId {
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate entry {name}"
        );
        self.entries.push(Entry { name, kind, tensor });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn params(&self) -> impl Iterator<Item = &Entry<T>> {
        self.entries.iter().filter(|e| e.kind == EntryKind::Param)
    }

    /// Trainable scalar count.
    pub fn param_count(&self) -> usize {
        self.params().map(|e| e.tensor.len()).sum()
    }

    /// Trainable scalar count over entries whose name starts with `prefix`.
    pub fn param_count_with_prefix(&self, prefix: &str) -> usize {
        self.params()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    /// Copies gradients accumulated on bound graph leaves into the stored tensors.
    pub fn accumulate_grads(&mut self, bindings: &Bindings<T>) {
        for (entry, bound) in self.entries.iter_mut().zip(&bindings.vars) {
            if let (EntryKind::Param, Some(var)) = (entry.kind, bound) {
                if let Some(g) = var.grad() {
                    entry.tensor.accumulate_grad(&g);
                }
            }
        }
    }

    /// Same store converted to another element type (gradients dropped).
    pub fn cast<U: Elem>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    kind: e.kind,
                    tensor: e.tensor.cast(),
                })
                .collect(),
        }
    }
}

/// Graph leaves created for stored parameters during one forward pass.
pub struct Bindings<T: Elem> {
    vars: Vec<Option<Var<T>>>,
}

impl<T: Elem> Bindings<T> {
    pub fn get(&self, id: ParamId) -> Option<&Var<T>> {
        self.vars.get(id.0).and_then(Option::as_ref)
    }
}

enum StoreAccess<'a, T: Elem> {
    Shared(&'a ParamStore<T>),
    Exclusive(&'a mut ParamStore<T>),
}

/// Forward-pass context: parameter access, mode, and randomness for dropout.
pub struct Ctx<'a, T: Elem> {
    store: StoreAccess<'a, T>,
    mode: Mode,
    rng: Option<&'a mut dyn RngCore>,
    track_grad: bool,
    bound: Vec<Option<Var<T>>>,
}

impl<'a, T: Elem> Ctx<'a, T> {
    /// Training pass: batch statistics, dropout, gradients.
    pub fn train(store: &'a mut ParamStore<T>, rng: &'a mut dyn RngCore) -> Self {
        let n = store.len();
        Self {
            store: StoreAccess::Exclusive(store),
            mode: Mode::Train,
            rng: Some(rng),
            track_grad: true,
            bound: vec![None; n],
        }
    }

    /// Inference pass: running statistics, no dropout, no gradients.
    pub fn eval(store: &'a ParamStore<T>) -> Self {
        let n = store.len();
        Self {
            store: StoreAccess::Shared(store),
            mode: Mode::Eval,
            rng: None,
            track_grad: false,
            bound: vec![None; n],
        }
    }

    /// Eval-mode pass that still records gradients with respect to parameters.
    pub fn eval_with_grad(store: &'a ParamStore<T>) -> Self {
        let mut ctx = Self::eval(store);
        ctx.track_grad = true;
        ctx
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn store(&self) -> &ParamStore<T> {
        match &self.store {
            StoreAccess::Shared(s) => s,
            StoreAccess::Exclusive(s) => s,
        }
    }

    /// Graph leaf for a stored tensor, created once per pass.
    pub fn param(&mut self, id: ParamId) -> Var<T> {
        if let Some(v) = &self.bound[id.0] {
            return v.clone();
        }
        let entry = &self.store().entries[id.0];
        let value = entry.tensor.clone();
        let var = if self.track_grad && entry.kind == EntryKind::Param {
            Var::parameter(value)
        } else {
            Var::constant(value)
        };
        self.bound[id.0] = Some(var.clone());
        var
    }

    pub fn buffer(&self, id: ParamId) -> &Tensor<T> {
        self.store().get(id)
    }

    /// Mutable running-statistics pair; only available in a training pass.
    pub fn buffers_mut(&mut self, a: ParamId, b: ParamId) -> Option<(&mut [T], &mut [T])> {
        match &mut self.store {
            StoreAccess::Exclusive(s) => {
                assert_ne!(a, b);
                let (lo, hi, swap) = if a.0 < b.0 { (a.0, b.0, false) } else { (b.0, a.0, true) };
                let (left, right) = s.entries.split_at_mut(hi);
                let x = left[lo].tensor.data_mut();
                let y = right[0].tensor.data_mut();
                Some(if swap { (y, x) } else { (x, y) })
            }
            StoreAccess::Shared(_) => None,
        }
    }

    pub fn rng(&mut self) -> Result<&mut dyn RngCore> {
        match self.rng.as_deref_mut() {
            Some(r) => Ok(r),
            None => Err(Error::invalid("training pass requires a random generator")),
        }
    }

    pub fn finish(self) -> Bindings<T> {
        Bindings { vars: self.bound }
    }
}
