//! Parameter snapshots: a JSON manifest of `{name, shape, dtype, offset}`
//! entries plus a flat little-endian blob of all values in manifest order.
//! Offsets are in bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const DTYPE: &str = "f64";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub params: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub blob: Vec<u8>,
}

impl Checkpoint {
    /// Snapshot of every entry (parameters and buffers) of `store`.
    pub fn capture(store: &ParamStore) -> Self {
        let mut params = Vec::with_capacity(store.len());
        let mut blob = Vec::new();
        for e in store.entries() {
            params.push(ManifestEntry {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                dtype: DTYPE.into(),
                offset: blob.len(),
            });
            for v in e.value.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        Checkpoint {
            manifest: Manifest { params },
            blob,
        }
    }

    /// Decodes the tensor stored under `name`.
    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let e = self
            .manifest
            .params
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("no entry named {name:?}")))?;
        self.decode(e)
    }

    fn decode(&self, e: &ManifestEntry) -> Result<Tensor> {
        if e.dtype != DTYPE {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported dtype {:?}",
                e.name, e.dtype
            )));
        }
        let len: usize = e.shape.iter().product();
        let end = e.offset + 8 * len;
        let bytes = self.blob.get(e.offset..end).ok_or_else(|| {
            Error::Checkpoint(format!(
                "{}: bytes {}..{end} outside blob of {}",
                e.name,
                e.offset,
                self.blob.len()
            ))
        })?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(e.shape.clone(), data)
    }

    /// Overwrites every entry of `store` from the checkpoint, matching by
    /// name and requiring equal shapes.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if self.manifest.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} entries, model has {}",
                self.manifest.params.len(),
                store.len()
            )));
        }
        let mut decoded = Vec::with_capacity(store.len());
        for entry in store.entries() {
            let t = self.tensor(&entry.name)?;
            if t.shape() != entry.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: checkpoint shape {:?}, model shape {:?}",
                    entry.name,
                    t.shape(),
                    entry.value.shape()
                )));
            }
            decoded.push(t);
        }
        for (entry, t) in store.entries_mut().iter_mut().zip(decoded) {
            entry.value = t;
        }
        Ok(())
    }

    /// Writes `<stem>.json` and `<stem>.bin`.
    pub fn save(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        let (json, bin) = paths(stem);
        fs::write(&json, serde_json::to_string_pretty(&self.manifest)?)?;
        fs::write(&bin, &self.blob)?;
        Ok((json, bin))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (json, bin) = paths(stem);
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(json)?)?;
        let blob = fs::read(bin)?;
        let ck = Checkpoint { manifest, blob };
        for e in &ck.manifest.params {
            ck.decode(e)?;
        }
        Ok(ck)
    }
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "a.w",
            Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, 1e-300]).unwrap(),
        );
        s.add_buffer("a.running_var", Tensor::ones(vec![3]));
        s
    }

    #[test]
    fn offsets_are_byte_positions() {
        let ck = Checkpoint::capture(&store());
        assert_eq!(ck.manifest.params[0].offset, 0);
        assert_eq!(ck.manifest.params[1].offset, 32);
        assert_eq!(ck.blob.len(), 56);
        assert_eq!(&ck.blob[8..16], &(-2.5f64).to_le_bytes());
    }

    #[test]
    fn disk_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let src = store();
        let ck = Checkpoint::capture(&src);
        ck.save(&dir.path().join("model")).unwrap();
        let back = Checkpoint::load(&dir.path().join("model")).unwrap();
        assert_eq!(back, ck);
        let mut dst = store();
        dst.entries_mut()[0].value = Tensor::zeros(vec![2, 2]);
        back.restore(&mut dst).unwrap();
        assert_eq!(dst, src);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let ck = Checkpoint::capture(&store());
        let mut other = ParamStore::new();
        other.add("a.w", Tensor::zeros(vec![4]));
        other.add_buffer("a.running_var", Tensor::ones(vec![3]));
        assert!(matches!(ck.restore(&mut other), Err(Error::Checkpoint(_))));
    }
}
