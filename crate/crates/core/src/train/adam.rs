//! Adam with coupled L2 weight decay.

use crate::error::{Error, Result};
use crate::nn::{EntryKind, ParamStore};
use crate::tensor::Elem;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Per-parameter first and second moments plus the step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every trainable entry using
    /// `grad + weight_decay · param`. Entries without a gradient count as
    /// zero gradient. A non-finite gradient aborts before anything changes.
    pub fn step<T: Elem>(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        for e in store.params() {
            if let Some(g) = e.tensor.grad() {
                if g.len() != e.tensor.len() {
                    return Err(Error::ShapeMismatch {
                        op: "adam_step",
                        left: e.tensor.shape().to_vec(),
                        right: vec![g.len()],
                    });
                }
                if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {} ({})", e.name, bad.as_f64())));
                }
            }
        }
        if self.m.is_empty() {
            for e in store.entries() {
                let n = if e.kind == EntryKind::Param { e.tensor.len() } else { 0 };
                self.m.push(vec![0.0; n]);
                self.v.push(vec![0.0; n]);
            }
        }
        if self.m.len() != store.len() {
            return Err(Error::invalid(format!(
                "optimizer state covers {} entries, model has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.epsilon, self.weight_decay);
        for ((e, m), v) in store.entries_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if e.kind != EntryKind::Param {
                continue;
            }
            let grad: Vec<f64> = match e.tensor.grad() {
                Some(g) => g.iter().map(|v| v.as_f64()).collect(),
                None => vec![0.0; e.tensor.len()],
            };
            for (k, p) in e.tensor.data_mut().iter_mut().enumerate() {
                let pv = p.as_f64();
                let g = grad[k] + wd * pv;
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                let update = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                *p = T::from_f64_lossy(pv - update);
            }
        }
        Ok(())
    }
}
