//! Named parameter collections and their tape bindings.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, TensorId};

/// An ordered set of named weight matrices. Gradients and optimizer
/// moments are congruent `ParamSet`s with the same names and shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ParamSet {
    entries: Vec<(String, Array2<f64>)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>) {
        let name = name.into();
        debug_assert!(self.get(&name).is_none(), "duplicate parameter {name}");
        self.entries.push((name, value));
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn entries(&self) -> &[(String, Array2<f64>)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(String, Array2<f64>)] {
        &mut self.entries
    }

    /// Total scalar count across all matrices.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, v)| (n.clone(), Array2::zeros(v.dim())))
                .collect(),
        }
    }

    /// `self += factor * other`; shapes and names must match.
    pub fn add_scaled(&mut self, other: &ParamSet, factor: f64) {
        assert_eq!(self.entries.len(), other.entries.len(), "param set mismatch");
        for ((name, value), (other_name, other_value)) in
            self.entries.iter_mut().zip(other.entries.iter())
        {
            assert_eq!(name, other_name, "param set mismatch");
            value.scaled_add(factor, other_value);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }
}

/// Tape leaves for each entry of a [`ParamSet`], queryable by name.
pub struct BoundParams {
    names: Vec<String>,
    ids: Vec<TensorId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> TensorId {
        match self.names.iter().position(|n| n == name) {
            Some(k) => self.ids[k],
            None => panic!("unbound parameter {name}"),
        }
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }
}

/// Inserts every parameter as a leaf on `tape`.
pub fn bind_params(tape: &mut Tape, params: &ParamSet) -> BoundParams {
    let mut names = Vec::with_capacity(params.entries().len());
    let mut ids = Vec::with_capacity(params.entries().len());
    for (name, value) in params.entries() {
        names.push(name.clone());
        ids.push(tape.leaf(value.clone()));
    }
    BoundParams { names, ids }
}

/// Evaluates `loss_thunk` on a fresh tape and returns the loss value
/// together with exact reverse-mode gradients congruent to `params`.
/// Parameters the loss never touches get zero gradients.
pub fn grad<F>(params: &ParamSet, loss_thunk: F) -> Result<(f64, ParamSet)>
where
    F: FnOnce(&mut Tape, &BoundParams) -> Result<TensorId>,
{
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let loss = loss_thunk(&mut tape, &bound)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let grads = tape.backward(loss);
    let mut out = params.zeros_like();
    for (k, (_, slot)) in out.entries_mut().iter_mut().enumerate() {
        if let Some(g) = grads.get(bound.ids[k]) {
            slot.assign(g);
        }
    }
    Ok((value, out))
}
