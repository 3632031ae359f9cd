use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
    lookup: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    /// Glorot-uniform matrix.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Mat::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit));
        self.add(name, value)
    }

    pub fn add_const(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, Mat::from_elem((rows, cols), v))
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    pub fn zeros_like(&self) -> Grads {
        Grads(self.values.iter().map(|v| Mat::zeros(v.raw_dim())).collect())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self.iter() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(())
    }

    /// Rounds every value through `f32`, matching what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn assign_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::InvalidInput("parameter sets have different layouts".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.dim() != src.dim() {
                return Err(Error::DimensionMismatch { expected: dst.len(), actual: src.len() });
            }
            dst.assign(src);
        }
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<Mat>);

impl Grads {
    pub fn get(&self, id: ParamId) -> &Mat {
        &self.0[id.0]
    }

    pub fn accumulate(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.0 {
            *a *= k;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }
}
