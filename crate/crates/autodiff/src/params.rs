//! Named learnable parameters and the per-pass graph that binds them.

use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// Accumulated gradient, same shape as `value`.
    pub grad: Tensor,
    pub requires_grad: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name: names are the
    /// checkpoint key and must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let grad = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            value,
            grad,
            requires_grad: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds `buffer` into the stored gradients.
    pub fn accumulate(&mut self, buffer: &GradBuffer) -> Result<()> {
        if buffer.grads.len() != self.params.len() {
            return Err(shape_err(
                "accumulate",
                format!("{} gradients for {} parameters", buffer.grads.len(), self.params.len()),
            ));
        }
        for (p, g) in self.params.iter_mut().zip(&buffer.grads) {
            if let Some(g) = g {
                for (d, s) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
        }
        Ok(())
    }

    /// Replaces every value with the one stored under the same name in
    /// `other`; both stores must hold identical names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(shape_err(
                "load_values",
                format!("{} parameters, expected {}", other.len(), self.len()),
            ));
        }
        for p in &mut self.params {
            let src = other
                .id(&p.name)
                .map(|id| other.value(id))
                .ok_or_else(|| shape_err("load_values", format!("missing parameter {}", p.name)))?;
            if src.shape() != p.value.shape() {
                return Err(shape_err(
                    "load_values",
                    format!("{}: {:?} vs {:?}", p.name, src.shape(), p.value.shape()),
                ));
            }
            p.value = src.clone();
        }
        Ok(())
    }
}

/// Per-pass parameter gradients, aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    grads: Vec<Option<Tensor>>,
}

impl GradBuffer {
    pub fn empty(len: usize) -> Self {
        Self {
            grads: vec![None; len],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Elementwise sum; merging in a fixed order keeps results reproducible.
    pub fn merge(&mut self, other: &GradBuffer) {
        assert_eq!(self.grads.len(), other.grads.len(), "gradient buffers differ in length");
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a.as_mut(), b) {
                (_, None) => {}
                (Some(a), Some(b)) => {
                    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
                (None, Some(b)) => *a = Some(b.clone()),
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// A tape bound to a parameter store. Parameters are placed on the tape on
/// first use, so a pass only records what it touches.
pub struct Graph<'p> {
    tape: Tape,
    store: &'p ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    /// Continues `tape` with every parameter already bound: `vars[i]` stands
    /// for the `i`-th parameter of `store`. Used to differentiate with
    /// respect to parameters supplied as ordinary tape variables.
    pub fn with_bindings(tape: Tape, store: &'p ParamStore, vars: &[Var]) -> Self {
        assert_eq!(vars.len(), store.len(), "one variable per parameter");
        Self {
            tape,
            store,
            bound: vars.iter().copied().map(Some).collect(),
        }
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let v = self.tape.leaf(p.value.clone(), p.requires_grad);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.tape.constant(value)
    }

    pub fn is_bound(&self, id: ParamId) -> bool {
        self.bound[id.0].is_some()
    }

    /// Gradients of `loss` for every bound parameter.
    pub fn param_grads(&self, loss: Var) -> Result<GradBuffer> {
        let g = self.tape.backward(loss)?;
        let grads = self
            .bound
            .iter()
            .map(|b| b.and_then(|v| g.get(v).cloned()))
            .collect();
        Ok(GradBuffer { grads })
    }
}

impl Deref for Graph<'_> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Graph<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulation_is_additive_and_resettable() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(vec![1.0, 2.0]));
        for _ in 0..2 {
            let mut g = Graph::new(&store);
            let v = g.param(w);
            let l = g.sum(v).unwrap();
            let buf = g.param_grads(l).unwrap();
            store.accumulate(&buf).unwrap();
        }
        assert_eq!(store.get(w).grad.data(), &[2.0, 2.0]);
        store.zero_grad();
        assert_eq!(store.get(w).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn unused_parameters_get_no_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(1.0));
        let b = store.add("b", Tensor::scalar(1.0));
        let mut g = Graph::new(&store);
        let v = g.param(a);
        let l = g.scale(v, 3.0).unwrap();
        let buf = g.param_grads(l).unwrap();
        assert_eq!(buf.get(a).unwrap().data(), &[3.0]);
        assert!(buf.get(b).is_none());
    }
}
