//! Flat parameter container plus JSON manifest.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic   "NGCKPT01"                 8 bytes
//! count   u32                        number of entries
//! entry   name_len u32, name utf-8,
//!         rank u32, dims u64 * rank,
//!         payload f64 * prod(dims)
//! ```
//!
//! The manifest is written next to the container as `<file>.json` and carries
//! a format version, model dimensions, RNG seeds, free-form metadata and the
//! SHA-256 of the container bytes, which [`load`] verifies.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"NGCKPT01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dims: BTreeMap<String, usize>,
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub metadata: serde_json::Value,
    #[serde(default)]
    pub checksum: String,
}

impl Manifest {
    pub fn new() -> Self {
        Self {
            version: FORMAT_VERSION,
            dims: BTreeMap::new(),
            seeds: BTreeMap::new(),
            metadata: serde_json::Value::Null,
            checksum: String::new(),
        }
    }
}

impl Default for Manifest {
    fn default() -> Self {
        Self::new()
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.total_size() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, name, value) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.rank() as u32).to_le_bytes());
        for &d in value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NumError::Format("truncated container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(NumError::Format("bad magic".into()));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| NumError::Format(format!("parameter name: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let payload = r.take(n * 8)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if store.id(&name).is_some() {
            return Err(NumError::Format(format!("duplicate parameter `{name}`")));
        }
        store.add(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(NumError::Format("trailing bytes after last entry".into()));
    }
    Ok(store)
}

pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the container to `path` and the manifest to `<path>.json`.
pub fn save(path: &Path, store: &ParamStore, manifest: &Manifest) -> Result<()> {
    let bytes = encode(store);
    let mut manifest = manifest.clone();
    manifest.checksum = checksum(&bytes);
    fs::write(path, &bytes)?;
    fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, Manifest)> {
    let bytes = fs::read(path)?;
    let manifest: Manifest = serde_json::from_slice(&fs::read(manifest_path(path))?)?;
    if manifest.version != FORMAT_VERSION {
        return Err(NumError::Format(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    let actual = checksum(&bytes);
    if actual != manifest.checksum {
        return Err(NumError::Format(format!(
            "checksum mismatch: manifest {} vs file {actual}",
            manifest.checksum
        )));
    }
    Ok((decode(&bytes)?, manifest))
}
