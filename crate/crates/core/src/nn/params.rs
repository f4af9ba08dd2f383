use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::optim::AdamState;
use crate::error::{Error, Result};

/// A dense row-major array with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "tensor of shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Index of a tensor inside the [`ParameterSet`] that registered it.
///
/// Ids stay valid for clones of that set and for sets built by
/// [`ParameterSet::zeros_like`], which is how online/target pairs and gradient
/// buffers share one network description.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named, shaped parameter arrays with optional optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParameterSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
    pub(crate) adam: Option<AdamState>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Argument(format!("invalid parameter name {name:?}")));
        }
        if self.index.contains_key(&name) {
            return Err(Error::Argument(format!("duplicate parameter name {name}")));
        }
        if self.adam.is_some() {
            return Err(Error::State(
                "cannot add parameters after optimizer state is attached".into(),
            ));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Some(&mut self.tensors[i]),
            None => None,
        }
    }

    /// Entries in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    #[cfg(test)]
    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn sorted_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.names.iter().map(String::as_str).collect();
        names.sort_unstable();
        names
    }

    /// Same names, same shapes, all zeros, no optimizer state.
    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            index: self.index.clone(),
            adam: None,
        }
    }

    /// Two sets are congruent iff they hold the same names with the same shapes.
    pub fn is_congruent(&self, other: &ParameterSet) -> bool {
        self.len() == other.len()
            && self.iter().all(|(name, t)| {
                other
                    .by_name(name)
                    .is_some_and(|o| o.shape() == t.shape())
            })
    }

    pub fn ensure_congruent(&self, other: &ParameterSet) -> Result<()> {
        if self.is_congruent(other) {
            return Ok(());
        }
        for (name, t) in self.iter() {
            match other.by_name(name) {
                None => return Err(Error::shape(format!("parameter {name} missing"))),
                Some(o) if o.shape() != t.shape() => {
                    return Err(Error::shape(format!(
                        "parameter {name}: shape {:?} vs {:?}",
                        t.shape(),
                        o.shape()
                    )))
                }
                _ => {}
            }
        }
        Err(Error::shape(format!(
            "parameter sets differ in size ({} vs {})",
            self.len(),
            other.len()
        )))
    }

    /// Position of `name` in `other`, for a pair already known to be congruent.
    /// Fast path when both sets share a layout.
    pub(crate) fn aligned_index(&self, other: &ParameterSet, i: usize) -> usize {
        if other.names.get(i) == Some(&self.names[i]) {
            i
        } else {
            other.index[&self.names[i]]
        }
    }

    pub(crate) fn tensor_at(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    /// Copies values from a congruent set, matching by name. Optimizer state
    /// is left untouched.
    pub fn assign_from(&mut self, other: &ParameterSet) -> Result<()> {
        self.ensure_congruent(other)?;
        for i in 0..self.tensors.len() {
            let j = self.aligned_index(other, i);
            self.tensors[i]
                .data
                .copy_from_slice(&other.tensors[j].data);
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x = value);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Elementwise `self += other` for a congruent set.
    pub fn add_assign(&mut self, other: &ParameterSet) -> Result<()> {
        self.ensure_congruent(other)?;
        for i in 0..self.tensors.len() {
            let j = self.aligned_index(other, i);
            for (a, b) in self.tensors[i].data.iter_mut().zip(&other.tensors[j].data) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Equal names, shapes, and bit patterns. Optimizer state is compared too.
    pub fn bitwise_eq(&self, other: &ParameterSet) -> bool {
        if !self.is_congruent(other) {
            return false;
        }
        let values_eq = (0..self.tensors.len()).all(|i| {
            let j = self.aligned_index(other, i);
            self.tensors[i].bitwise_eq(&other.tensors[j])
        });
        values_eq
            && match (&self.adam, &other.adam) {
                (None, None) => true,
                (Some(a), Some(b)) => a.bitwise_eq(b, self, other),
                _ => false,
            }
    }

    /// SHA-256 over sorted names, shapes, and raw value bits.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for name in self.sorted_names() {
            let t = self.by_name(name).expect("name from own index");
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for d in t.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for x in t.data() {
                hasher.update(x.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn adam_state(&self) -> Option<&AdamState> {
        self.adam.as_ref()
    }

    /// Copies every entry into `dest` under `prefix` + name.
    pub fn export_into(&self, prefix: &str, dest: &mut ParameterSet) -> Result<()> {
        for (name, t) in self.iter() {
            dest.insert(format!("{prefix}{name}"), t.clone())?;
        }
        Ok(())
    }
}
