//! Named parameter storage with per-parameter trainability, gradients and
//! optimizer moments.

use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    pub grad: Option<Tensor>,
    pub(crate) moments: Option<Moments>,
}

#[derive(Clone, Debug)]
pub(crate) struct Moments {
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub(crate) step: u64,
}

/// Parameters in insertion order. Iteration order is stable, which keeps
/// checkpoints and gradient reductions deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            let p = &mut self.params[i];
            p.value = value;
            p.trainable = trainable;
            p.grad = None;
            p.moments = None;
            return ParamId(i);
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            trainable,
            grad: None,
            moments: None,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.params[self.id(name)?.0].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let id = self.id(name)?;
        Ok(&mut self.params[id.0].value)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Marks each parameter trainable iff `pred(name)` holds, clearing
    /// gradients and optimizer state on every parameter.
    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            p.trainable = pred(&p.name);
            p.grad = None;
            p.moments = None;
        }
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.name.as_str())
            .collect()
    }

    pub fn frozen_names(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| !p.trainable)
            .map(|p| p.name.as_str())
            .collect()
    }

    /// Number of scalar entries across trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds `scale * grad` into the accumulated gradient of a trainable
    /// parameter. Frozen parameters are rejected.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor, scale: f64) -> Result<()> {
        let p = &mut self.params[id.0];
        if !p.trainable {
            return Err(Error::Numeric(format!(
                "gradient delivered to frozen parameter {}",
                p.name
            )));
        }
        p.value.same_shape(grad)?;
        match &mut p.grad {
            Some(g) => g.axpy(scale, grad)?,
            None => p.grad = Some(grad.scale(scale)),
        }
        Ok(())
    }
}
