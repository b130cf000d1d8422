use alloc::string::String;
use alloc::vec::Vec;

use super::{NnError, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replace every tensor by one of identical name and shape, in order.
    pub fn load(&mut self, entries: Vec<(String, Tensor<F>)>) -> Result<(), NnError> {
        if entries.len() != self.tensors.len() {
            return Err(NnError::Invalid("parameter count mismatch on load"));
        }
        for (i, (name, tensor)) in entries.into_iter().enumerate() {
            if name != self.names[i] {
                return Err(NnError::UnknownParam(name));
            }
            if tensor.shape() != self.tensors[i].shape() {
                return Err(NnError::ShapeMismatch {
                    op: "load",
                    left: self.tensors[i].shape().to_vec(),
                    right: tensor.shape().to_vec(),
                });
            }
            self.tensors[i] = tensor;
        }
        Ok(())
    }
}
