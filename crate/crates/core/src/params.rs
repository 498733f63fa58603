//! Named parameter storage and per-tape bindings.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Records every parameter as a gradient-tracked leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.values.iter().map(|v| tape.leaf(v.clone())).collect(),
        }
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.values.iter().map(|v| tape.constant(v.clone())).collect(),
        }
    }

    /// Replaces all values; shapes must match the existing ones.
    pub fn load_values(&mut self, values: Vec<Tensor>) -> Result<(), String> {
        if values.len() != self.values.len() {
            return Err(format!(
                "expected {} parameter tensors, got {}",
                self.values.len(),
                values.len()
            ));
        }
        for (i, (old, new)) in self.values.iter().zip(&values).enumerate() {
            if old.shape() != new.shape() {
                return Err(format!(
                    "parameter {} has shape {:?}, stored value has {:?}",
                    self.names[i],
                    old.shape(),
                    new.shape()
                ));
            }
        }
        self.values = values;
        Ok(())
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// Gradient per parameter, zeros where the loss does not reach.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    }
}
