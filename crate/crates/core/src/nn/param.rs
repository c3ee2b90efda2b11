use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Mat, Tape, Var};
use crate::error::{Error, Result};

/// A trainable tensor with its accumulated gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Mat,
    pub grad: Mat,
    pub m: Mat,
    pub v: Mat,
}

impl Parameter {
    fn new(name: String, value: Mat) -> Self {
        let zeros = Array2::zeros(value.dim());
        Self {
            name,
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        }
    }
}

/// Named parameters addressed by slot index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> usize {
        self.params.push(Parameter::new(name.into(), value));
        self.params.len() - 1
    }

    /// Glorot-uniform `rows x cols` weight in ±sqrt(6 / (rows + cols)).
    pub fn add_glorot<R: Rng + ?Sized>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> usize {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: usize) -> &Parameter {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Parameter {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Push parameter `id` onto `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, id: usize) -> Var {
        tape.param(id, self.params[id].value.clone())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// All gradients as fresh zero buffers, for accumulation off the store.
    pub fn zero_grads_like(&self) -> Vec<Mat> {
        self.params.iter().map(|p| Array2::zeros(p.value.dim())).collect()
    }

    pub fn add_grads(&mut self, grads: &[Mat]) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.grad += g;
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.iter().all(|x| x.is_finite()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            params: self
                .params
                .iter()
                .map(|p| StoredTensor {
                    name: p.name.clone(),
                    shape: [p.value.nrows(), p.value.ncols()],
                    values: p.value.iter().copied().collect(),
                })
                .collect(),
        }
    }

    /// Overwrite values from a checkpoint with the same names and shapes.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        if ck.params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                ck.params.len()
            )));
        }
        for (p, stored) in self.params.iter_mut().zip(&ck.params) {
            if p.name != stored.name || [p.value.nrows(), p.value.ncols()] != stored.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    stored.name,
                    stored.shape,
                    p.name,
                    p.value.dim()
                )));
            }
            p.value = Array2::from_shape_vec((stored.shape[0], stored.shape[1]), stored.values.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }

    /// Snapshot of the values only.
    pub fn values(&self) -> Vec<Mat> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_values(&mut self, values: &[Mat]) {
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value.assign(v);
        }
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint: name, shape and row-major values per tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: Vec<StoredTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
