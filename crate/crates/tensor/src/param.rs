use std::collections::HashMap;

use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named learnable tensor.
///
/// `lr_scale` is the runtime multiplier of the equalized learning rate: the
/// forward pass reads `lr_scale · value`. Buffers (running statistics) are
/// stored alongside with `trainable = false`.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub lr_scale: f64,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, lr_scale: f64) -> Result<ParamId> {
        self.insert(name.into(), value, lr_scale, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name.into(), value, 1.0, false)
    }

    fn insert(&mut self, name: String, value: Tensor<T>, lr_scale: f64, trainable: bool) -> Result<ParamId> {
        if !(lr_scale > 0.0 && lr_scale.is_finite()) {
            return invalid("param", format!("lr_scale must be positive, got {lr_scale} for {name}"));
        }
        if self.by_name.contains_key(&name) {
            return invalid("param", format!("duplicate parameter name {name}"));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            lr_scale,
            trainable,
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(self.params[id.0].value.shape(), value.shape(), "set_value shape change");
        self.params[id.0].value = value;
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.iter().filter(|(_, p)| p.trainable)
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.trainable().map(|(_, p)| p.value.numel()).sum()
    }

    /// Trainable scalar count of every parameter whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.trainable()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(_, p)| p.value.numel())
            .sum()
    }
}
