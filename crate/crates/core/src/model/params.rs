use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Uniform Xavier/Glorot on `rows x cols`.
    Xavier,
    /// Small uniform values, for embedding tables.
    Embedding,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter group: the name up to the first dot.
    pub fn group(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }
}

/// Names, shapes and offsets of every learnable tensor inside one flat
/// parameter vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    index: HashMap<String, usize>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.specs.len());
        self.specs.push(ParamSpec { name: name.to_string(), rows, cols, offset: self.total, init });
        self.total += rows * cols;
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.index.get(name).map(|&i| &self.specs[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![0.0; self.total];
        for s in &self.specs {
            let slot = &mut out[s.offset..s.offset + s.len()];
            match s.init {
                Init::Zeros => {}
                Init::Ones => slot.fill(1.0),
                Init::Xavier => {
                    let bound = (6.0 / (s.rows + s.cols) as f64).sqrt();
                    slot.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
                }
                Init::Embedding => slot.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1)),
            }
        }
        out
    }

    /// Places every parameter on `tape` as a trainable leaf.
    pub fn bind<T: Real>(self: &Arc<Self>, tape: &mut Tape<T>, values: &[T]) -> Bound {
        assert_eq!(values.len(), self.total, "parameter vector length mismatch");
        let vars = self
            .specs
            .iter()
            .map(|s| tape.param(Tensor::from_vec(s.rows, s.cols, values[s.offset..s.offset + s.len()].to_vec())))
            .collect();
        Bound { layout: Arc::clone(self), vars }
    }

    /// Flattens the gradients of bound parameters in layout order.
    pub fn collect_grad<T: Real>(&self, bound: &Bound, grads: &crate::autodiff::Gradients<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.total];
        for (s, &v) in self.specs.iter().zip(&bound.vars) {
            if let Some(g) = grads.get(v) {
                out[s.offset..s.offset + s.len()].copy_from_slice(&g.data);
            }
        }
        out
    }
}

/// Parameters bound to one tape.
pub struct Bound {
    layout: Arc<ParamLayout>,
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        let i = self.layout.index.get(name).unwrap_or_else(|| panic!("parameter {name} is not in the layout"));
        self.vars[*i]
    }

    pub fn has(&self, name: &str) -> bool {
        self.layout.contains(name)
    }
}

/// Named, serializable parameter collection θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layout: Arc<ParamLayout>,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn new(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if layout.total() != values.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count {} does not match layout size {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor<f64>> {
        let s = self.layout.get(name)?;
        Some(Tensor::from_vec(s.rows, s.cols, self.values[s.offset..s.offset + s.len()].to_vec()))
    }

    /// One `(name, tensor)` pair per parameter, in layout order.
    pub fn to_named(&self) -> Vec<(String, Tensor<f64>)> {
        self.layout
            .specs()
            .iter()
            .map(|s| (s.name.clone(), Tensor::from_vec(s.rows, s.cols, self.values[s.offset..s.offset + s.len()].to_vec())))
            .collect()
    }

    /// Inverse of [`ModelParams::to_named`]: every layout entry must be
    /// present with a matching shape, and no extra names are allowed.
    pub fn from_named(layout: Arc<ParamLayout>, named: &[(String, Tensor<f64>)]) -> Result<Self> {
        if named.len() != layout.specs().len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.specs().len(),
                named.len()
            )));
        }
        let mut values = vec![0.0; layout.total()];
        for (name, t) in named {
            let s = layout.get(name).ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
            if (s.rows, s.cols) != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    (s.rows, s.cols)
                )));
            }
            values[s.offset..s.offset + s.len()].copy_from_slice(&t.data);
        }
        Ok(Self { layout, values })
    }
}
