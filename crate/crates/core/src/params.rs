//! Named parameter storage and binding onto a tape.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Standard deviation of the normal weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Projection matrix.
    Weight,
    /// LayerNorm gain; exempt from weight decay.
    LayerNormScale,
    /// RMSNorm gain used by QK normalization.
    RmsNormScale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, kind, value });
    }

    /// `N(0, INIT_STD²)` matrix.
    pub fn add_weight<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: [usize; 2], rng: &mut R) {
        let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
        let value = Tensor::from_fn(shape, |_| T::of(normal.sample(rng)));
        self.insert(name, ParamKind::Weight, value);
    }

    /// Normalization gain initialized to ones.
    pub fn add_scale(&mut self, name: impl Into<String>, dim: usize, kind: ParamKind) {
        self.insert(name, kind, Tensor::full([dim], T::one()));
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    /// Replaces a parameter's value, which must keep its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self.get_mut(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::ParamShape {
                name: name.to_string(),
                expected: p.value.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: p.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Records every parameter as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound<'_> {
        self.bind_with(tape, true)
    }

    /// Records every parameter as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound<'_> {
        self.bind_with(tape, false)
    }

    /// Wraps variables already on a tape, one per parameter in store order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<Bound<'_>> {
        if vars.len() != self.params.len() {
            return Err(Error::Validation(alloc::format!(
                "expected {} variables, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        Ok(Bound { index: &self.index, vars })
    }

    fn bind_with(&self, tape: &mut Tape<T>, trainable: bool) -> Bound<'_> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        Bound { index: &self.index, vars }
    }
}

/// Tape handles for a bound [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct Bound<'a> {
    index: &'a BTreeMap<String, usize>,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
