use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Named trainable tensors, keyed by dotted path (`encoder.camera.block0.wq`).
///
/// Iteration order is lexicographic by path, which fixes the order of
/// optimizer updates and checkpoint records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) -> Result<()> {
        let path = path.into();
        if self.params.contains_key(&path) {
            return Err(Error::Input(format!("parameter `{path}` registered twice")));
        }
        self.params.insert(path, tensor.with_requires_grad(true));
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.params
            .get(path)
            .ok_or_else(|| Error::Input(format!("unknown parameter `{path}`")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(path)
            .ok_or_else(|| Error::Input(format!("unknown parameter `{path}`")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Paths beginning with `prefix`.
    pub fn paths_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> {
        self.paths().filter(move |p| p.starts_with(prefix))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// Multiply every stored gradient by `factor`.
    pub fn scale_grads(&mut self, factor: f64) {
        for t in self.params.values_mut() {
            if let Some(g) = &t.grad {
                let scaled = g.iter().map(|v| v * factor).collect();
                t.grad = Some(scaled);
            }
        }
    }
}
