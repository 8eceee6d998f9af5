//! Named parameter registry with persistent gradient buffers.

use std::collections::HashMap;

use crate::graph::{Result, TensorError};

/// A named trainable tensor. Names are unique within one store and the
/// registry order is the creation order, which fixes checkpoint layout.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub grad: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Default)]
pub struct ParamStore {
    entries: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(TensorError::Parameter(format!("duplicate parameter name: {name}")));
        }
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(TensorError::Dimension(format!(
                "parameter {name}: data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        let id = self.entries.len();
        self.index.insert(name.to_string(), id);
        self.entries.push(Parameter { name: name.to_string(), shape, data, grad: vec![0.0; n] });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.entries[id.0]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        if let Some(&i) = self.index.get(name) {
            Some(&mut self.entries[i])
        } else {
            None
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.entries.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    /// (name, shape) pairs in registry order, optionally dropping entries
    /// whose name starts with `exclude_prefix` (used to compare backbones
    /// while ignoring objective-specific heads).
    pub fn signature(&self, exclude_prefix: Option<&str>) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .filter(|p| match exclude_prefix {
                Some(pre) => !p.name.starts_with(pre),
                None => true,
            })
            .map(|p| (p.name.clone(), p.shape.clone()))
            .collect()
    }

    /// True when every parameter value is finite.
    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}
