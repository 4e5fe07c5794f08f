//! Named parameter tensors that outlive any one tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
    }

    /// Adds a tensor drawn uniformly from `(-bound, bound)`.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(
            name,
            Tensor::new(shape.to_vec(), data).expect("shape matches"),
        );
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Records every parameter as a leaf of `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            names: self.names.clone(),
            vars: self.values.iter().map(|v| tape.leaf(v.clone())).collect(),
        }
    }

    /// Names `vars` after this set's parameters, in order; used when the
    /// leaves were recorded elsewhere, as in gradient checks.
    pub fn rebind<'t>(&self, vars: &[Var<'t>]) -> Bound<'t> {
        assert_eq!(vars.len(), self.names.len(), "one variable per parameter");
        Bound {
            names: self.names.clone(),
            vars: vars.to_vec(),
        }
    }

    /// `p -= lr * grad(p)` for every parameter accepted by `trainable`.
    pub fn sgd_step(&mut self, bound: &Bound<'_>, lr: f64, trainable: impl Fn(&str) -> bool) {
        for ((name, value), var) in self.names.iter().zip(&mut self.values).zip(&bound.vars) {
            if !trainable(name) {
                continue;
            }
            let grad = var.grad();
            for (p, g) in value.data_mut().iter_mut().zip(grad.data()) {
                *p -= lr * g;
            }
        }
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.iter()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect()
    }

    pub fn from_named(entries: Vec<NamedTensor>) -> Result<Self, TensorError> {
        let mut set = Self::new();
        for e in entries {
            let t = Tensor::new(e.shape, e.data)?;
            set.names.push(e.name);
            set.values.push(t);
        }
        Ok(set)
    }
}

/// Parameters recorded on one tape, addressable by name.
#[derive(Debug, Clone)]
pub struct Bound<'t> {
    names: Vec<String>,
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Looks up a parameter; panics on an unknown name, which is a wiring bug.
    pub fn get(&self, name: &str) -> Var<'t> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}
