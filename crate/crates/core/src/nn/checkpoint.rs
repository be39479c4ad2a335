//! Checkpoint directory layout:
//!
//! - `manifest.json`: parameter names, shapes, dtype and byte offsets in
//!   manifest order, plus config and vocabulary hashes and free-form
//!   metadata.
//! - `params.bin`: little-endian row-major values, concatenated in
//!   manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::params::ParamStore;
use super::tensor::Tensor;
use super::NnError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const FORMAT: &str = "rankef-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dtype: String,
    pub config_hash: String,
    pub vocab_hash: String,
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Serializes `store` into manifest entries and the raw parameter bytes.
pub fn encode_params<T: Scalar>(store: &ParamStore<T>) -> (Vec<ParamEntry>, Vec<u8>) {
    let mut bytes = Vec::with_capacity(store.num_elements() * T::BYTES);
    let mut entries = Vec::with_capacity(store.len());
    for (_, name, t) in store.iter() {
        let offset = bytes.len();
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
        entries.push(ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            nbytes: bytes.len() - offset,
        });
    }
    (entries, bytes)
}

pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    store: &ParamStore<T>,
    config_hash: &str,
    vocab_hash: &str,
    metadata: serde_json::Value,
) -> Result<Manifest, NnError> {
    fs::create_dir_all(dir)?;
    let (params, bytes) = encode_params(store);
    let manifest = Manifest {
        format: FORMAT.to_string(),
        dtype: T::DTYPE.to_string(),
        config_hash: config_hash.to_string(),
        vocab_hash: vocab_hash.to_string(),
        params,
        metadata,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| NnError::Checkpoint(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    fs::write(dir.join(PARAMS_FILE), bytes)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, NnError> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(e.to_string()))
}

/// Loads a checkpoint as trainable parameters of type `T`.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(Manifest, ParamStore<T>), NnError> {
    let manifest = read_manifest(dir)?;
    if manifest.format != FORMAT {
        return Err(NnError::Checkpoint(format!(
            "unsupported format {:?}",
            manifest.format
        )));
    }
    if manifest.dtype != T::DTYPE {
        return Err(NnError::Checkpoint(format!(
            "checkpoint dtype {} does not match requested {}",
            manifest.dtype,
            T::DTYPE
        )));
    }
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    let mut store = ParamStore::new();
    for entry in &manifest.params {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + entry.nbytes;
        if entry.nbytes != n * T::BYTES || end > bytes.len() {
            return Err(NnError::Checkpoint(format!(
                "entry {:?} has inconsistent size or offset",
                entry.name
            )));
        }
        let data = bytes[entry.offset..end]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();
        store.insert(&entry.name, Tensor::new(entry.shape.clone(), data)?.with_grad())?;
    }
    Ok((manifest, store))
}
