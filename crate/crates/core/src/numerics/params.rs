use std::collections::HashMap;
use std::path::Path;

use super::{Matrix, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
}

/// Named trainable tensors with matching gradient accumulators.
///
/// Insertion order is the canonical order for checkpoints and optimizer
/// state, so two stores built the same way serialize identically.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Inserts or replaces `name`; the gradient slot is reset to zeros.
    pub fn insert(&mut self, name: &str, value: Matrix<T>) -> usize {
        let grad = Matrix::zeros(value.rows(), value.cols());
        if let Some(&i) = self.index.get(name) {
            self.params[i].value = value;
            self.params[i].grad = grad;
            return i;
        }
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        self.index.insert(name.to_string(), self.params.len() - 1);
        self.params.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn value(&self, idx: usize) -> &Matrix<T> {
        &self.params[idx].value
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<T>> {
        self.index_of(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix<T>> {
        self.index_of(name).map(move |i| &mut self.params[i].value)
    }

    pub fn grad(&self, name: &str) -> Option<&Matrix<T>> {
        self.index_of(name).map(|i| &self.params[i].grad)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Adds `scale * grad` into the slot of parameter `idx`.
    pub fn accumulate_grad(&mut self, idx: usize, grad: &Matrix<T>, scale: T) {
        let slot = &mut self.params[idx].grad;
        assert_eq!(slot.shape(), grad.shape(), "gradient shape mismatch");
        for (o, &g) in slot.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *o = *o + scale * g;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        let mut out = ParameterStore::new();
        for p in &self.params {
            out.insert(&p.name, p.value.cast());
        }
        out
    }

    /// True when every parameter value is bitwise equal.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .as_slice()
                        .iter()
                        .zip(b.value.as_slice())
                        .all(|(x, y)| x.to_f64_lossy().to_bits() == y.to_f64_lossy().to_bits())
            })
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"MBCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes parameters as a versioned named-tensor container.
///
/// Layout, all integers little-endian `u32`:
///
/// ```text
/// "MBCK" version count
/// repeated count times:
///     name_len name_bytes(utf-8) rows cols rows*cols × f32 (little-endian)
/// ```
pub fn encode_checkpoint(store: &ParameterStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_scalars() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for v in p.value.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<ParameterStore<f32>> {
    let mut cur = ByteCursor {
        bytes,
        pos: 0,
        origin,
    };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(origin, "bad checkpoint magic"));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let count = cur.u32()? as usize;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::format(origin, "parameter name is not utf-8"))?
            .to_string();
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(origin, "tensor shape overflows"))?;
        let payload = cur.take(n)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(&name, Matrix::from_vec(rows, cols, data));
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(origin, "trailing bytes after checkpoint"));
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParameterStore<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(store)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterStore<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

pub(crate) struct ByteCursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub origin: &'a Path,
}

impl<'a> ByteCursor<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.origin, "truncated payload"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
