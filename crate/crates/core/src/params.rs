//! Named parameter storage and per-pass graph binding.

use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named tensors. Insertion order is the canonical
/// order for optimizer state and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lookup: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor from `other`, which must hold the same names
    /// and shapes.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if src.shape() != self.tensors[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    self.tensors[i].shape(),
                    src.shape()
                )));
            }
            self.tensors[i] = src.clone();
        }
        Ok(())
    }
}

/// One forward (and optionally backward) pass over a [`ParamStore`].
///
/// Parameters are placed on the graph the first time they are used.
pub struct Session<'a> {
    graph: Graph,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    trainable: Vec<bool>,
}

impl<'a> Session<'a> {
    /// All parameters receive gradients.
    pub fn train(store: &'a ParamStore) -> Self {
        Self::with_trainable(store, |_| true)
    }

    /// No parameter receives a gradient.
    pub fn eval(store: &'a ParamStore) -> Self {
        Self::with_trainable(store, |_| false)
    }

    pub fn with_trainable(store: &'a ParamStore, trainable: impl Fn(&str) -> bool) -> Self {
        Session {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            trainable: store.names.iter().map(|n| trainable(n)).collect(),
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.trainable[id.0] {
            self.graph.param(t)
        } else {
            self.graph.constant(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Gradients per parameter after `backward`; `None` for parameters that
    /// were unused, frozen, or unreachable from the loss.
    pub fn take_grads(&mut self) -> Vec<Option<Tensor>> {
        let bound = self.bound.clone();
        bound
            .into_iter()
            .map(|b| b.and_then(|v| self.graph.take_grad(v)))
            .collect()
    }
}

impl Deref for Session<'_> {
    type Target = Graph;
    fn deref(&self) -> &Graph {
        &self.graph
    }
}

impl DerefMut for Session<'_> {
    fn deref_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_binds_once_and_returns_grads() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Tensor::full([2], 3.0)).unwrap();
        let b = store.insert("b", Tensor::full([2], 1.0)).unwrap();
        assert!(store.insert("a", Tensor::ones([1])).is_err());
        let mut s = Session::train(&store);
        let va = s.p(a);
        assert_eq!(s.p(a), va);
        let sq = s.mul(va, va).unwrap();
        let loss = s.sum(sq);
        s.backward(loss).unwrap();
        let grads = s.take_grads();
        assert_eq!(grads[a.index()].as_ref().unwrap().data(), &[6.0, 6.0]);
        assert!(grads[b.index()].is_none());
    }

    #[test]
    fn frozen_params_get_no_grad() {
        let mut store = ParamStore::new();
        let a = store.insert("enc.w", Tensor::ones([2])).unwrap();
        let mut s = Session::with_trainable(&store, |n| !n.starts_with("enc."));
        let va = s.p(a);
        let loss = s.sum(va);
        assert!(s.backward(loss).is_ok());
        assert!(s.take_grads()[0].is_none());
    }
}
