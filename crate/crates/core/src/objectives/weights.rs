//! Named-tensor container shared by generators, evaluation networks and
//! optimizer state: a JSON manifest plus one raw little-endian f32 blob.
//!
//! ```json
//! { "format_version": 1, "dtype": "f32le", "blob": "model.bin",
//!   "tensors": [{ "name": "enc0.conv.weight", "shape": [16, 1, 3, 3], "offset": 0, "length": 144 }],
//!   "checksum": "sha256:…" }
//! ```
//!
//! `offset` and `length` count f32 elements, not bytes.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use projsynth_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{bail, Error, Result};
use crate::projector::io::{f32_from_le_bytes, f32_to_le_bytes, read_json, write_json};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    /// Blob file name, relative to the manifest's directory.
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered map of named f32 tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightSet {
    tensors: IndexMap<String, WeightTensor>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            bail!(Dimension, "tensor '{name}': shape {shape:?} does not hold {} values", data.len());
        }
        if self.tensors.contains_key(&name) {
            bail!(Config, "duplicate tensor name '{name}'");
        }
        self.tensors.insert(name, WeightTensor { shape, data });
        Ok(())
    }

    pub fn insert_tensor<T: Element>(&mut self, name: impl Into<String>, t: &Tensor<T>) -> Result<()> {
        self.insert(name, t.shape().to_vec(), t.data().iter().map(|v| v.as_f64() as f32).collect())
    }

    pub fn get(&self, name: &str) -> Result<&WeightTensor> {
        self.tensors.get(name).ok_or_else(|| Error::Load(format!("missing tensor '{name}'")))
    }

    /// The tensor named `name`, required to have exactly `shape`.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&WeightTensor> {
        let t = self.get(name)?;
        if t.shape != shape {
            bail!(Load, "tensor '{name}' has shape {:?}, architecture expects {shape:?}", t.shape);
        }
        Ok(t)
    }

    pub fn remove(&mut self, name: &str) -> Option<WeightTensor> {
        self.tensors.shift_remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &WeightTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Write `<path>` (manifest) and a sibling `.bin` blob.
    pub fn save(&self, path: &Path) -> Result<()> {
        let blob_path = blob_path_for(path);
        let mut values = Vec::new();
        let mut entries = Vec::with_capacity(self.len());
        for (name, t) in &self.tensors {
            entries.push(TensorEntry { name: name.clone(), shape: t.shape.clone(), offset: values.len(), length: t.data.len() });
            values.extend_from_slice(&t.data);
        }
        let bytes = f32_to_le_bytes(&values);
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            dtype: "f32le".into(),
            blob: blob_path.file_name().expect("blob has a file name").to_string_lossy().into_owned(),
            tensors: entries,
            checksum: checksum(&bytes),
        };
        fs::write(&blob_path, &bytes).map_err(Error::io(&blob_path))?;
        write_json(path, &manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(path)?;
        if manifest.format_version != FORMAT_VERSION {
            bail!(Load, "{}: unsupported format_version {}", path.display(), manifest.format_version);
        }
        if manifest.dtype != "f32le" {
            bail!(Load, "{}: unsupported dtype '{}'", path.display(), manifest.dtype);
        }
        let blob_path = path.parent().unwrap_or(Path::new(".")).join(&manifest.blob);
        let bytes = fs::read(&blob_path).map_err(Error::io(&blob_path))?;
        let actual = checksum(&bytes);
        if actual != manifest.checksum {
            return Err(Error::Integrity(format!(
                "{}: checksum mismatch (manifest {}, blob {actual})",
                blob_path.display(),
                manifest.checksum
            )));
        }
        let values = f32_from_le_bytes(&bytes, &blob_path)?;
        let mut set = WeightSet::new();
        for e in manifest.tensors {
            let declared: usize = e.shape.iter().product();
            if declared != e.length {
                bail!(Load, "tensor '{}': declared shape {:?} holds {declared} values but length is {}", e.name, e.shape, e.length);
            }
            let end = e.offset.checked_add(e.length).filter(|&end| end <= values.len());
            let Some(end) = end else {
                bail!(Load, "tensor '{}': range {}+{} exceeds the {} values in the blob", e.name, e.offset, e.length, values.len());
            };
            if set.contains(&e.name) {
                bail!(Load, "duplicate tensor name '{}' in manifest", e.name);
            }
            set.insert(e.name, e.shape, values[e.offset..end].to_vec())?;
        }
        Ok(set)
    }
}

pub fn blob_path_for(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn checksum(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

pub fn save_weights(path: &Path, weights: &WeightSet) -> Result<()> {
    weights.save(path)
}

pub fn load_weights(path: &Path) -> Result<WeightSet> {
    WeightSet::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightSet {
        let mut w = WeightSet::new();
        w.insert("a.weight", vec![2, 3], vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE, 0.1, -0.0]).unwrap();
        w.insert("a.bias", vec![2], vec![7.0, 8.0]).unwrap();
        w
    }

    #[test]
    fn round_trip_is_bit_exact_and_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let w = sample();
        w.save(&path).unwrap();
        let back = WeightSet::load(&path).unwrap();
        assert_eq!(back.names().collect::<Vec<_>>(), vec!["a.weight", "a.bias"]);
        for (name, t) in w.iter() {
            let b = back.get(name).unwrap();
            assert_eq!(b.shape, t.shape);
            assert_eq!(b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        let manifest: Manifest = read_json(&path).unwrap();
        assert_eq!(manifest.tensors[1].offset, 6);
        assert!(manifest.checksum.starts_with("sha256:"));
    }

    #[test]
    fn corrupted_blob_fails_integrity_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        sample().save(&path).unwrap();
        let blob = blob_path_for(&path);
        let mut bytes = fs::read(&blob).unwrap();
        bytes[0] ^= 1;
        fs::write(&blob, bytes).unwrap();
        assert!(matches!(WeightSet::load(&path), Err(Error::Integrity(_))));
    }

    #[test]
    fn missing_names_and_shape_mismatches_are_load_errors() {
        let w = sample();
        let err = w.get("b.weight").unwrap_err();
        assert!(matches!(err, Error::Load(ref m) if m.contains("b.weight")));
        assert!(matches!(w.get_shaped("a.bias", &[3]), Err(Error::Load(_))));
        assert!(w.get_shaped("a.bias", &[2]).is_ok());
    }
}
