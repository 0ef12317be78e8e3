//! Named parameter arrays and their on-disk checkpoint format.
//!
//! A checkpoint is a pair of files: `<stem>.json` (manifest) and `<stem>.bin`
//! (every entry's values as little-endian `f32`, concatenated in manifest order).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Buffers such as batch-norm running statistics are not trainable.
    pub trainable: bool,
}

/// Insertion-ordered map from parameter name to array.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T = f32> {
    arch: String,
    entries: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(arch: impl Into<String>) -> Self {
        Self {
            arch: arch.into(),
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn arch(&self) -> &str {
        &self.arch
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        data: Vec<T>,
        trainable: bool,
    ) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NnError::Shape(format!(
                "param {name}: shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Param {
            name,
            shape: shape.to_vec(),
            data,
            trainable,
        });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn param(&self, name: &str) -> Result<&Param<T>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&[T]> {
        self.param(name).map(|p| p.data.as_slice())
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [T]> {
        match self.index.get(name) {
            Some(&i) => Ok(self.entries[i].data.as_mut_slice()),
            None => Err(NnError::MissingParam(name.to_string())),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    /// Same names and shapes, all values zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.entries {
            p.data.iter_mut().for_each(|v| *v = T::zero());
        }
        out
    }

    pub fn fill_zero(&mut self) {
        for p in &mut self.entries {
            p.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// L2 norm over trainable entries.
    pub fn global_norm(&self) -> T {
        let mut s = 0.0f64;
        for p in self.entries.iter().filter(|p| p.trainable) {
            for v in &p.data {
                let x = v.as_f64();
                s += x * x;
            }
        }
        T::lit(s.sqrt())
    }

    /// Rescales trainable entries so the global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            let scale = max_norm / (norm + T::lit(1e-6));
            for p in self.entries.iter_mut().filter(|p| p.trainable) {
                p.data.iter_mut().for_each(|v| *v *= scale);
            }
        }
        norm
    }

    fn check_compatible<U>(&self, other: &ParamSet<U>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(NnError::Shape(format!(
                "param sets differ in length: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.shape != b.shape {
                return Err(NnError::Shape(format!(
                    "param mismatch: {} {:?} vs {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }

    /// `self += alpha * other`, over every entry.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * *y;
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            arch: self.arch.clone(),
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::lit(v.as_f64())).collect(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Flat copy of every value in manifest order.
    pub fn flatten(&self) -> Vec<T> {
        self.entries
            .iter()
            .flat_map(|p| p.data.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(default = "default_true")]
    pub trainable: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointManifest {
    pub arch: String,
    pub dtype: String,
    pub entries: Vec<ManifestEntry>,
    pub total_elements: usize,
}

/// Paths of the manifest and blob for a checkpoint stem (extension ignored).
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

impl ParamSet<f32> {
    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            arch: self.arch.clone(),
            dtype: "f32le".to_string(),
            entries: self
                .entries
                .iter()
                .map(|p| ManifestEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    trainable: p.trainable,
                })
                .collect(),
            total_elements: self.num_elements(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blob = Vec::with_capacity(self.num_elements() * 4);
        for p in &self.entries {
            for v in &p.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        blob
    }

    pub fn from_parts(manifest: &CheckpointManifest, blob: &[u8]) -> Result<Self> {
        if manifest.dtype != "f32le" {
            return Err(NnError::Format {
                field: "dtype".into(),
                msg: format!("unsupported dtype {}", manifest.dtype),
            });
        }
        let numel: usize = manifest
            .entries
            .iter()
            .map(|e| e.shape.iter().product::<usize>())
            .sum();
        if numel != manifest.total_elements {
            return Err(NnError::Format {
                field: "total_elements".into(),
                msg: format!("entries sum to {numel}, manifest says {}", manifest.total_elements),
            });
        }
        if blob.len() != numel * 4 {
            return Err(NnError::Format {
                field: "blob".into(),
                msg: format!("expected {} bytes, found {}", numel * 4, blob.len()),
            });
        }
        let mut set = ParamSet::new(manifest.arch.clone());
        let mut offset = 0;
        for e in &manifest.entries {
            let n: usize = e.shape.iter().product();
            let data = blob[offset..offset + n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            offset += n * 4;
            set.insert(e.name.clone(), &e.shape, data, e.trainable)?;
        }
        Ok(set)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let (json, bin) = checkpoint_paths(stem);
        if let Some(dir) = json.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&json, serde_json::to_vec_pretty(&self.manifest())?)?;
        fs::write(&bin, self.to_bytes())?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (json, bin) = checkpoint_paths(stem);
        let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(&json)?)?;
        let blob = fs::read(&bin)?;
        Self::from_parts(&manifest, &blob)
    }
}
