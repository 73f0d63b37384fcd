//! Named trainable parameters and their binary file format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "NPL1" | count: u32 | count x { name_len: u32 | name: utf-8 | rank: u32 | dims: u64 x rank | values: f64 x prod(dims) }
//! ```

use std::io::{Read, Write};

use indexmap::IndexMap;

use super::array::Array;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NPL1";

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Array,
    pub grad: Array,
}

/// Ordered map from dot-separated parameter path to value and gradient
/// accumulator.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> Result<ParamId> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name}")));
        }
        let grad = Array::zeros_like(&value);
        let (idx, _) = self.params.insert_full(name, Param { value, grad });
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid param id")
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array {
        &self.params[id.0].grad
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds `scale * grads` into the accumulators. Missing entries count as zero.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (i, g) in grads.by_param.iter().enumerate() {
            if let Some(g) = g {
                let acc = &mut self.params[i].grad;
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * v;
                }
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|p| p.grad.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, s: f64) {
        for p in self.params.values_mut() {
            for g in p.grad.data_mut() {
                *g *= s;
            }
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, p) in &self.params {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            let shape = p.value.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("unknown magic bytes {magic:?}")));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| Error::Format(format!("parameter name is not utf-8: {e}")))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            let mut b = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let value = Array::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
            store.insert(name, value).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(store)
    }

    /// Copies values from `other` into this store, matching by name.
    /// Every parameter must be present with the same shape.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Format(format!(
                "parameter count mismatch: expected {}, file has {}",
                self.len(),
                other.len()
            )));
        }
        for (name, p) in self.params.iter_mut() {
            let src = other
                .get(name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "parameter {name}: expected shape {:?}, file has {:?}",
                    p.value.shape(),
                    src.value.shape()
                )));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) by_param: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.by_param.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }

    /// Sum of another gradient set into this one.
    pub fn merge(&mut self, other: Gradients) {
        if self.by_param.len() < other.by_param.len() {
            self.by_param.resize(other.by_param.len(), None);
        }
        for (slot, g) in self.by_param.iter_mut().zip(other.by_param) {
            match (slot.as_mut(), g) {
                (Some(acc), Some(g)) => acc.add_assign(&g),
                (None, Some(g)) => *slot = Some(g),
                _ => {}
            }
        }
    }
}
