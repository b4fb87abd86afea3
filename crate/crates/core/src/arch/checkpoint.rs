//! Checkpoints: a JSON manifest next to a raw little-endian `f64` blob.
//!
//! The manifest records the config, variant, normalization and every
//! parameter's name, shape and byte offset. The blob for `model.json` is
//! `model.bin` in the same directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::config::{ModelConfig, Variant};
use crate::arch::model::Model;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::features::NormStats;

pub const CHECKPOINT_FORMAT: &str = "envpred-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    variant: Variant,
    config: ModelConfig,
    norm: NormStats,
    blob: String,
    params: Vec<Entry>,
}

/// Path of the parameter blob belonging to a manifest path.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let blob = blob_path(path);
    let mut bytes = Vec::new();
    let mut params = Vec::with_capacity(model.params().len());
    for (name, p) in model.names().iter().zip(model.params()) {
        params.push(Entry {
            name: name.clone(),
            shape: p.shape().to_vec(),
            offset: bytes.len(),
            len: p.len(),
        });
        for v in p.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        variant: model.variant(),
        config: model.config().clone(),
        norm: *model.norm(),
        blob: blob
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::Invalid(format!("checkpoint path {path:?} has no file name")))?,
        params,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(path, text)?;
    fs::write(blob, bytes)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Invalid(format!("{path:?} is not a checkpoint manifest")));
    }
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: manifest.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(dir.join(&manifest.blob))?;
    let mut names = Vec::with_capacity(manifest.params.len());
    let mut params = Vec::with_capacity(manifest.params.len());
    let mut expected_end = 0;
    for e in manifest.params {
        if e.shape.iter().product::<usize>() != e.len {
            return Err(Error::ShapeMismatch {
                name: e.name,
                expected: vec![e.len],
                found: e.shape,
            });
        }
        let end = e.offset + 8 * e.len;
        if end > bytes.len() {
            return Err(Error::Truncated(format!(
                "parameter {} needs bytes {}..{end}, blob has {}",
                e.name,
                e.offset,
                bytes.len()
            )));
        }
        let data = bytes[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Tensor::new(e.shape, data)?);
        names.push(e.name);
        expected_end = expected_end.max(end);
    }
    if expected_end != bytes.len() {
        return Err(Error::Invalid(format!(
            "blob has {} bytes, manifest describes {expected_end}",
            bytes.len()
        )));
    }
    Model::from_parts(manifest.config, manifest.variant, manifest.norm, names, params)
}
