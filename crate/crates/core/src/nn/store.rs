use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{numel, Float, Grads, Tape, Tensor, Var};

/// How a parameter is initialised when a module registers it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal(f64),
    /// Uniform on `[-b, b]`.
    Uniform(f64),
    Const(f64),
    /// Unit-norm random vector (spectral-norm power-iteration state).
    UnitNormal,
}

/// Named tensors in registration order. Trainable entries are optimised;
/// the rest are buffers carried through checkpoints.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Float> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            trainable: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        trainable: bool,
    ) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Parameter(format!(
                "parameter `{name}` registered twice"
            )));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(trainable);
        Ok(())
    }

    /// Draws an initial value; panics on duplicate names (a wiring bug).
    pub fn init(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        trainable: bool,
        rng: &mut impl Rng,
    ) {
        let n = numel(shape);
        let data: Vec<f64> = match init {
            Init::Const(v) => vec![v; n],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Init::Uniform(b) => (0..n).map(|_| rng.random_range(-b..=b)).collect(),
            Init::UnitNormal => {
                let d = Normal::new(0.0, 1.0).expect("unit normal");
                let v: Vec<f64> = (0..n).map(|_| d.sample(rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / norm).collect()
            }
        };
        let name = name.into();
        self.insert(name.clone(), Tensor::from_f64(shape, &data), trainable)
            .unwrap_or_else(|e| panic!("{e}"));
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(|i| &mut self.values[i])
    }

    pub fn value(&self, i: usize) -> &Tensor<T> {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.values[i]
    }

    pub fn is_trainable(&self, i: usize) -> bool {
        self.trainable[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>, bool)> {
        self.names
            .iter()
            .zip(&self.values)
            .zip(&self.trainable)
            .map(|((n, v), &t)| (n.as_str(), v, t))
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.iter().filter(|e| e.2).map(|e| e.1.len()).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.cast()).collect(),
            trainable: self.trainable.clone(),
            index: self.index.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }

    /// Makes the store's values available to a forward pass. With a tape,
    /// trainable entries become gradient-tracked leaves.
    pub fn bind(&self, tape: Option<&Tape<T>>) -> Bound<'_, T> {
        let vars = self
            .values
            .iter()
            .zip(&self.trainable)
            .map(|(v, &t)| match tape {
                Some(tape) if t => tape.leaf(v.clone()),
                _ => Var::constant(v.clone()),
            })
            .collect();
        Bound { store: self, vars }
    }

    /// Trainable values in store order.
    pub fn trainable_values(&self) -> Vec<Tensor<T>> {
        self.iter().filter(|e| e.2).map(|e| e.1.clone()).collect()
    }

    /// Binds caller-made graph values to the trainable entries (in store
    /// order); buffers stay constant.
    pub fn bind_vars(&self, trainable: &[Var<T>]) -> Bound<'_, T> {
        let mut it = trainable.iter();
        let vars = self
            .values
            .iter()
            .zip(&self.trainable)
            .map(|(v, &t)| {
                if t {
                    it.next().expect("one value per trainable entry").clone()
                } else {
                    Var::constant(v.clone())
                }
            })
            .collect();
        assert!(it.next().is_none(), "more values than trainable entries");
        Bound { store: self, vars }
    }

    /// Entries whose names start with `prefix`, with the prefix removed.
    pub fn extract(&self, prefix: &str) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (n, v, t) in self.iter() {
            if let Some(rest) = n.strip_prefix(prefix) {
                out.insert(rest, v.clone(), t)
                    .expect("unique names stay unique");
            }
        }
        out
    }

    /// Replaces values from `other`, which must hold exactly the same names
    /// and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for (n, v, _) in other.iter() {
            let slot = self
                .get_mut(n)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{n}`")))?;
            if slot.shape() != v.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{n}` has shape {:?}, expected {:?}",
                    v.shape(),
                    slot.shape()
                )));
            }
            *slot = v.clone();
        }
        Ok(())
    }
}

/// Parameters of one forward pass as graph values.
pub struct Bound<'a, T: Float> {
    store: &'a ParamStore<T>,
    vars: Vec<Var<T>>,
}

impl<T: Float> Bound<'_, T> {
    pub fn get(&self, name: &str) -> &Var<T> {
        let i = self
            .store
            .index_of(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not registered"));
        &self.vars[i]
    }

    /// Gradients in store order; `None` for buffers and unused entries.
    pub fn grads(&self, g: &Grads<T>) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|v| g.get(v).cloned()).collect()
    }
}
