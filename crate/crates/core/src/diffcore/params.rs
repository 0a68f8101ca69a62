use std::collections::HashMap;

use super::tape::{BufferUpdate, DiffArray};
use super::DiffError;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub array: DiffArray,
    /// Non-trainable entries are state buffers (running statistics).
    pub trainable: bool,
}

/// Owns every parameter of one model instance. Names are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>, trainable: bool) -> Result<ParamId, DiffError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(DiffError::DuplicateParam(name));
        }
        let array = DiffArray::new(shape, values)?;
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, array, trainable });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].array.values
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

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.array.values.len()).sum()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let p = &mut self.params[id.0];
        if !p.trainable {
            return;
        }
        match &mut p.array.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, g)| *b += g),
            None => p.array.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.array.grad = None;
        }
    }

    /// Applies queued buffer writes (batch-norm running statistics).
    pub fn apply_buffer_updates(&mut self, updates: Vec<BufferUpdate>) {
        for u in updates {
            let p = &mut self.params[u.param.0];
            debug_assert_eq!(p.array.values.len(), u.values.len());
            p.array.values = u.values;
        }
    }

    /// Copies values from another store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), DiffError> {
        if self.params.len() != other.params.len() {
            return Err(DiffError::Invalid(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.array.shape != src.array.shape {
                return Err(DiffError::ShapeMismatch {
                    op: "copy_values_from",
                    left: dst.array.shape.clone(),
                    right: src.array.shape.clone(),
                });
            }
            dst.array.values.copy_from_slice(&src.array.values);
        }
        Ok(())
    }
}
