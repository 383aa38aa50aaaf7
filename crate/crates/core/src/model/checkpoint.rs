//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic, the manifest length as a little-endian `u64`,
//! the JSON manifest, then every array's values as little-endian `f64` in
//! manifest order. Files are written to a temporary sibling and renamed into
//! place.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::Model;
use crate::autodiff::NamedArray;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PJFCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub vocab: Vocabulary,
    pub job_ids: Vec<String>,
    pub resume_ids: Vec<String>,
    /// Free-form provenance (seed, corpus hash, training config).
    pub extra: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

impl Model {
    pub fn to_bytes(&self, extra: serde_json::Value) -> Result<Vec<u8>> {
        let snapshot = self.store.snapshot();
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab_hash: self.vocab.hash(),
            vocab: self.vocab.clone(),
            job_ids: self.job_ids.clone(),
            resume_ids: self.resume_ids.clone(),
            extra,
            arrays: snapshot
                .iter()
                .map(|a| ArrayEntry {
                    name: a.name.clone(),
                    shape: a.value.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.store.num_values());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &snapshot {
            for v in a.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, CheckpointManifest)> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: CheckpointManifest = serde_json::from_slice(body)?;
        if manifest.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        if manifest.vocab.hash() != manifest.vocab_hash {
            return Err(bad("vocabulary hash mismatch"));
        }
        let mut data = &bytes[16 + len..];
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for entry in &manifest.arrays {
            let n: usize = entry.shape.iter().product();
            if data.len() < 8 * n {
                return Err(Error::Checkpoint(format!("truncated values of `{}`", entry.name)));
            }
            let values = data[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[8 * n..];
            arrays.push(NamedArray {
                name: entry.name.clone(),
                value: Tensor::new(entry.shape.clone(), values)?,
            });
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after the last array"));
        }
        let mut model = Model::new(
            manifest.config.clone(),
            manifest.vocab.clone(),
            manifest.job_ids.clone(),
            manifest.resume_ids.clone(),
            0,
        )?;
        model.store.restore(&arrays)?;
        Ok((model, manifest))
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let bytes = self.to_bytes(extra)?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointManifest)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
