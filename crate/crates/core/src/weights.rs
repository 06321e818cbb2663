//! Named weight tensors stored as a JSON manifest plus one raw little-endian
//! `f32` blob.
//!
//! ```json
//! { "blob": "weights.bin",
//!   "tensors": [ { "name": "fuse.reduce.weight", "shape": [8, 16, 1, 1],
//!                  "offset": 0, "byte_len": 512 } ] }
//! ```
//!
//! `offset` and `byte_len` are in bytes; `byte_len` must equal
//! `4 · prod(shape)` and the range must lie inside the blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub byte_len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Blob path relative to the manifest's directory.
    pub blob: String,
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
}

/// Immutable set of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightSet {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("weight set has no tensor {name:?}")))
    }

    /// Like [`get`](Self::get) but also checks the shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return Err(Error::Shape(format!(
                "tensor {name:?} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    /// Uniform random tensors in `[-scale, scale]`, deterministic in `seed`.
    pub fn random(specs: &[(String, Vec<usize>)], seed: u64, scale: f32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = Self::new();
        for (name, shape) in specs {
            let t = Tensor::from_fn(shape.clone(), |_| rng.gen_range(-scale..=scale));
            set.insert(name.clone(), t);
        }
        set
    }

    /// All-zero tensors with the given shapes.
    pub fn zeros(specs: &[(String, Vec<usize>)]) -> Self {
        let mut set = Self::new();
        for (name, shape) in specs {
            set.insert(name.clone(), Tensor::zeros(shape.clone()));
        }
        set
    }

    /// Union of two sets; names in `other` win.
    pub fn merged(mut self, other: WeightSet) -> Self {
        self.tensors.extend(other.tensors);
        self
    }
}

/// Writes `set` as `manifest_path` plus a blob next to it named
/// `<manifest stem>.bin`.
pub fn save_weights(manifest_path: impl AsRef<Path>, set: &WeightSet) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("weights");
    let blob_name = format!("{stem}.bin");
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in &set.tensors {
        let offset = blob.len() as u64;
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            byte_len: blob.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        blob: blob_name.clone(),
        tensors,
    };
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let blob_path = dir.join(&blob_name);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))
}

pub fn load_weights(manifest_path: impl AsRef<Path>) -> Result<WeightSet> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let blob_path = dir.join(&manifest.blob);
    let blob = if manifest.tensors.is_empty() && !blob_path.exists() {
        Vec::new()
    } else {
        fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?
    };

    let mut set = WeightSet::new();
    for entry in manifest.tensors {
        let elems: usize = entry.shape.iter().product();
        if entry.byte_len != 4 * elems as u64 {
            return Err(Error::Format(format!(
                "tensor {:?}: byte_len {} does not match shape {:?}",
                entry.name, entry.byte_len, entry.shape
            )));
        }
        let end = entry.offset.checked_add(entry.byte_len);
        let Some(end) = end.filter(|&e| e <= blob.len() as u64) else {
            return Err(Error::Format(format!(
                "tensor {:?}: bytes {}..+{} exceed blob of {} bytes",
                entry.name,
                entry.offset,
                entry.byte_len,
                blob.len()
            )));
        };
        let bytes = &blob[entry.offset as usize..end as usize];
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if set.tensors.contains_key(&entry.name) {
            return Err(Error::Format(format!("duplicate tensor {:?}", entry.name)));
        }
        set.insert(entry.name, Tensor::new(entry.shape, data)?);
    }
    Ok(set)
}
