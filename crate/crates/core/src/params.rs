//! Named model parameters.

use std::sync::Arc;

use indexmap::IndexMap;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct Parameter {
    pub id: String,
    pub tensor: Arc<Tensor>,
    pub trainable: bool,
}

/// Parameters of one model, iterated in insertion order.
///
/// Tensors sit behind `Arc` so a tape can hold them without copying; the
/// optimizer mutates them in place once the tape is gone.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: IndexMap<String, Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        id: impl Into<String>,
        tensor: Tensor,
        trainable: bool,
    ) -> Result<(), TensorError> {
        let id = id.into();
        if self.params.contains_key(&id) {
            return Err(TensorError::Contract(format!(
                "duplicate parameter id `{id}`"
            )));
        }
        self.params.insert(
            id.clone(),
            Parameter {
                id,
                tensor: Arc::new(tensor),
                trainable,
            },
        );
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Parameter> {
        self.params.get(id)
    }

    pub fn tensor(&self, id: &str) -> Result<&Tensor, TensorError> {
        self.params
            .get(id)
            .map(|p| p.tensor.as_ref())
            .ok_or_else(|| TensorError::UnknownParameter(id.to_string()))
    }

    /// Replaces the value of an existing parameter; the shape must not change.
    pub fn set(&mut self, id: &str, tensor: Tensor) -> Result<(), TensorError> {
        let p = self
            .params
            .get_mut(id)
            .ok_or_else(|| TensorError::UnknownParameter(id.to_string()))?;
        if p.tensor.shape() != tensor.shape() {
            return Err(TensorError::DimensionMismatch {
                op: "set_parameter",
                left: p.tensor.shape().to_vec(),
                right: tensor.shape().to_vec(),
            });
        }
        p.tensor = Arc::new(tensor);
        Ok(())
    }

    pub(crate) fn tensor_mut(&mut self, id: &str) -> Option<&mut Tensor> {
        self.params
            .get_mut(id)
            .map(|p| Arc::make_mut(&mut p.tensor))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.tensor.len()).sum()
    }
}
