use std::collections::HashMap;

use crate::error::{Result, RstError};
use crate::graph::{Gradients, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered name → tensor map holding every learnable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for WeightStore<T> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> WeightStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(RstError::Config(format!("duplicate parameter name '{name}'")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> WeightStore<U> {
        WeightStore {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    /// All parameters flattened in store order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|(_, t)| t.to_f64_vec()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, values: &[f64]) {
        let mut off = 0;
        for (_, t) in &mut self.entries {
            for v in t.data_mut() {
                *v = T::from_f64(values[off]);
                off += 1;
            }
        }
    }
}

/// Graph handles for the tensors of a [`WeightStore`].
pub struct ParamSet<T> {
    vars: HashMap<String, Var<T>>,
}

impl<T: Scalar> ParamSet<T> {
    /// Every tensor becomes a trainable leaf on `g`.
    pub fn track(g: &Graph<T>, ws: &WeightStore<T>) -> Self {
        Self {
            vars: ws.iter().map(|(n, t)| (n.to_string(), g.param(t.clone()))).collect(),
        }
    }

    pub fn constants(g: &Graph<T>, ws: &WeightStore<T>) -> Self {
        Self {
            vars: ws.iter().map(|(n, t)| (n.to_string(), g.constant(t.clone()))).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Var<T>> {
        self.vars
            .get(name)
            .ok_or_else(|| RstError::Config(format!("missing parameter '{name}'")))
    }

    pub fn get_opt(&self, name: &str) -> Option<&Var<T>> {
        self.vars.get(name)
    }

    /// Gradients in store order.
    pub fn gradients(&self, ws: &WeightStore<T>, grads: &Gradients<T>) -> Vec<(String, Tensor<T>)> {
        ws.names()
            .map(|n| (n.to_string(), grads.get(&self.vars[n])))
            .collect()
    }
}
