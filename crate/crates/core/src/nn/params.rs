use std::collections::BTreeMap;

use super::{NnError, Tensor};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named tensor owned by a [`ParamStore`]. Frozen parameters take part in
/// forward passes but never receive gradients or optimizer updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.add_with(name, tensor, false)
    }

    /// Non-trainable state that still belongs in checkpoints (running statistics).
    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.add_with(name, tensor, true)
    }

    fn add_with(&mut self, name: impl Into<String>, tensor: Tensor, frozen: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter { name, tensor, frozen });
        id
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<(), NnError> {
        let p = &mut self.params[id.0];
        if p.tensor.shape() != tensor.shape() {
            return Err(NnError::Shape(format!(
                "{}: expected {:?}, got {:?}",
                p.name,
                p.tensor.shape(),
                tensor.shape()
            )));
        }
        p.tensor = tensor;
        Ok(())
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.index.range(prefix.to_string()..).take_while(move |(k, _)| k.starts_with(prefix)).map(|(_, &id)| id)
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    /// Buffers (names ending in `running_mean`/`running_var`) stay frozen.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        let ids: Vec<ParamId> = self.ids_with_prefix(prefix).collect();
        for id in ids {
            let p = &mut self.params[id.0];
            p.frozen = frozen || is_buffer_name(&p.name);
        }
    }

    pub fn freeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.frozen = true);
    }

    pub fn trainable(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Copies every tensor of `other` with a matching name into `self`.
    pub fn load_from(&mut self, other: &[(String, Tensor)]) -> Result<usize, NnError> {
        let mut n = 0;
        for (name, t) in other {
            if let Some(id) = self.id(name) {
                self.set(id, t.clone())?;
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn records(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.tensor.clone())).collect()
    }

    /// Adds `scale * N(0, 1) / sqrt(fan_in)` noise to every non-buffer
    /// tensor under `prefix` (fan-in 1 for vectors); moves zero-initialized
    /// layers off their degenerate start before gradient checks.
    pub fn jitter_prefix(&mut self, prefix: &str, scale: f64, rng: &mut StreamRng) {
        let ids: Vec<ParamId> = self.ids_with_prefix(prefix).collect();
        for id in ids {
            let p = &mut self.params[id.0];
            if is_buffer_name(&p.name) {
                continue;
            }
            let fan_in: usize = p.tensor.shape().iter().skip(1).product();
            let std = scale / (fan_in.max(1) as f64).sqrt();
            for v in p.tensor.data_mut() {
                *v += std * crate::rng::normal(rng);
            }
        }
    }

    pub fn records_with_prefix(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.ids_with_prefix(prefix).map(|id| (self.get(id).name.clone(), self.tensor(id).clone())).collect()
    }
}

pub(crate) fn is_buffer_name(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

/// Uniform in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut StreamRng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}
