use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::{Precision, Tensor};

/// Whether an entry is updated by the optimizer or only carried along
/// (batch-norm running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Trainable,
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Ordered, uniquely named model parameters. This is the unit that is
/// broadcast to clients, trained locally, uploaded and averaged.
///
/// Entry order is fixed by the model builder, so two sets built from the same
/// configuration line up position by position.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(contract_err!("duplicate parameter name {name:?}"));
        }
        self.entries.push(ParamEntry { name, kind, tensor });
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.entries[index].tensor
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].tensor
    }

    /// Total number of scalar values, buffers included.
    pub fn count_params(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Number of values the optimizer updates.
    pub fn count_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Concatenates every entry's values in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count_params());
        for e in &self.entries {
            out.extend_from_slice(e.tensor.data());
        }
        out
    }

    /// Inverse of [`ParamSet::flatten`]: names, kinds and shapes come from
    /// `template`, values from `values`.
    pub fn unflatten(template: &ParamSet, values: &[f64]) -> Result<ParamSet> {
        let expected = template.count_params();
        if values.len() != expected {
            return Err(dim_err!(
                "unflatten: template holds {expected} values, vector has {}",
                values.len()
            ));
        }
        let mut offset = 0;
        let entries = template
            .entries
            .iter()
            .map(|e| {
                let n = e.tensor.numel();
                let tensor = Tensor::new(e.tensor.shape().to_vec(), values[offset..offset + n].to_vec())?;
                offset += n;
                Ok(ParamEntry {
                    name: e.name.clone(),
                    kind: e.kind,
                    tensor,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ParamSet { entries })
    }

    /// Same names, kinds and shapes in the same order.
    pub fn same_structure(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name && a.kind == b.kind && a.tensor.shape() == b.tensor.shape()
            })
    }

    pub fn ensure_same_structure(&self, other: &ParamSet, what: &str) -> Result<()> {
        if self.same_structure(other) {
            return Ok(());
        }
        let first_diff = self
            .entries
            .iter()
            .zip(&other.entries)
            .find(|(a, b)| a.name != b.name || a.kind != b.kind || a.tensor.shape() != b.tensor.shape())
            .map(|(a, _)| a.name.as_str());
        Err(contract_err!(
            "{what}: parameter structure differs ({} vs {} entries, first mismatch at {:?})",
            self.len(),
            other.len(),
            first_diff
        ))
    }

    /// Rounds every value to the storage precision.
    pub fn round_to(&mut self, precision: Precision) {
        for e in &mut self.entries {
            precision.round_slice(e.tensor.data_mut());
        }
    }
}

/// Number of shared values in a parameter set.
pub fn count_params(p: &ParamSet) -> usize {
    p.count_params()
}
