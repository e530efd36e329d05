//! Named parameters and the Adam optimizer.

use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer, carries Adam moments.
    Trainable,
    /// State such as running statistics; never differentiated.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
    pub frozen: bool,
    pub grad: Option<Tensor<T>>,
    pub adam_m: Option<Tensor<T>>,
    pub adam_v: Option<Tensor<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameters. Iteration order is insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Parameter<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(TensorError::Invariant(format!("duplicate parameter name {name}")));
        }
        let moments = (kind == ParamKind::Trainable).then(|| Tensor::zeros(value.shape()));
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            kind,
            frozen: false,
            grad: None,
            adam_m: moments.clone(),
            adam_v: moments,
        });
        self.index.insert(name.to_string(), self.params.len() - 1);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| TensorError::Invariant(format!("unknown parameter {name}")))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Parameter<T>> {
        Ok(self.get(self.id(name)?))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Parameter<T>> {
        let id = self.id(name)?;
        Ok(self.get_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Record the parameter as a leaf of `g`; repeated binds return the same node.
    /// Frozen parameters and buffers are bound as constants.
    pub fn bind(&self, g: &mut Graph<T>, id: ParamId) -> Var {
        if let Some(v) = g.binding(id.0) {
            return v;
        }
        let p = &self.params[id.0];
        g.bind(id.0, p.value.clone(), p.kind == ParamKind::Trainable && !p.frozen)
    }

    pub fn bind_name(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        Ok(self.bind(g, self.id(name)?))
    }

    /// Add leaf gradients of bound parameters into their `grad` slots.
    pub fn collect_grads(&mut self, g: &Graph<T>) {
        for &(slot, var) in g.bindings() {
            if let Some(gr) = g.grad(var) {
                let p = &mut self.params[slot];
                match &mut p.grad {
                    Some(acc) => acc.add_assign(gr),
                    none => *none = Some(gr.clone()),
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Freeze every parameter for which `pred(name)` holds and unfreeze the rest.
    pub fn set_frozen(&mut self, pred: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            p.frozen = pred(&p.name);
        }
    }

    pub fn reset_moments(&mut self) {
        for p in &mut self.params {
            if p.kind == ParamKind::Trainable {
                p.adam_m = Some(Tensor::zeros(p.value.shape()));
                p.adam_v = Some(Tensor::zeros(p.value.shape()));
            }
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.numel())
            .sum()
    }
}

/// Adam with a staircase learning-rate schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_ratio: f64,
    pub decay_every: usize,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_ratio: 1.0,
            decay_every: 1,
        }
    }

    pub fn with_decay(mut self, ratio: f64, every: usize) -> Self {
        self.decay_ratio = ratio;
        self.decay_every = every.max(1);
        self
    }

    /// `lr · ratio^(⌊epoch / every⌋)`.
    pub fn effective_lr(&self, epoch: usize) -> f64 {
        self.lr * self.decay_ratio.powi((epoch / self.decay_every) as i32)
    }

    /// One bias-corrected update of every trainable, unfrozen parameter.
    /// Gradients of all parameters are cleared afterwards.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, epoch: usize) -> Result<()> {
        if let Some(p) = store
            .iter()
            .find(|p| p.kind == ParamKind::Trainable && !p.frozen && p.grad.is_none())
        {
            return Err(TensorError::Invariant(format!("parameter {} has no gradient", p.name)));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let lr = T::of(self.effective_lr(epoch));
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::one() - T::of(self.beta1.powi(t));
        let c2 = T::one() - T::of(self.beta2.powi(t));
        let eps = T::of(self.eps);
        for p in store.iter_mut() {
            if p.kind != ParamKind::Trainable || p.frozen {
                continue;
            }
            let g = p.grad.as_ref().expect("checked above");
            let m = p.adam_m.get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = p.adam_v.get_or_insert_with(|| Tensor::zeros(g.shape()));
            for (((w, &gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}
