//! Named parameter tensors with a stable flat ordering.

use serde::{Deserialize, Serialize};

use crate::{Tape, Tensor, Var};

/// One named tensor as it appears in parameter documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn tensor(&self) -> Tensor {
        Tensor::new(self.rows, self.cols, self.data.clone())
    }
}

/// Learnable tensors in insertion order, plus Adam moment slots.
///
/// The insertion order is the flat ordering used for gradients, optimiser
/// state and serialisation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    pub(crate) values: Vec<Tensor>,
    pub(crate) first_moment: Vec<Tensor>,
    pub(crate) second_moment: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.first_moment.push(Tensor::zeros(value.rows, value.cols));
        self.second_moment.push(Tensor::zeros(value.rows, value.cols));
        self.names.push(name.into());
        self.values.push(value);
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.values
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
    }

    /// Places every tensor on the tape as a leaf, in flat order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Overwrites all values from a flat vector of length [`Self::count`].
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.count(), "flat parameter vector has wrong length");
        let mut offset = 0;
        for t in &mut self.values {
            let n = t.len();
            t.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    pub fn reset_moments(&mut self) {
        for m in self.first_moment.iter_mut().chain(self.second_moment.iter_mut()) {
            m.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn to_layers(&self) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(name, t)| NamedTensor {
                name: name.clone(),
                rows: t.rows,
                cols: t.cols,
                data: t.data.clone(),
            })
            .collect()
    }

    pub fn from_layers(layers: &[NamedTensor]) -> Self {
        let mut store = Self::new();
        for layer in layers {
            store.push(layer.name.clone(), layer.tensor());
        }
        store
    }
}
