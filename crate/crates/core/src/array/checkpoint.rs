//! Parameter checkpoints: a flat name -> (shape, values) archive.
//!
//! Layout on disk is a directory holding
//!   - `manifest.json`: format version, dtype, per-entry name/shape/offset,
//!     and a sha256 over the binary blob
//!   - `params.bin`: all values as little-endian f64, concatenated in
//!     manifest order
//!
//! The manifest order is the store's registration order, so loading a
//! checkpoint into a freshly built model of the same architecture restores
//! every parameter.

use super::{DiffArray, ParamStore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("unsupported dtype {0}")]
    Dtype(String),
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error("parameter {name} missing from checkpoint")]
    MissingParam { name: String },
    #[error("parameter {name}: checkpoint shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset_bytes: u64,
    byte_len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dtype: String,
    sha256: String,
    entries: Vec<ManifestEntry>,
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write every parameter in the store to `dir`.
pub fn save(store: &ParamStore, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut blob: Vec<u8> = Vec::new();
    let mut entries = Vec::new();
    for (name, arr) in store.iter() {
        let offset = blob.len() as u64;
        for v in &arr.values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: arr.shape.clone(),
            offset_bytes: offset,
            byte_len: (arr.values.len() * 8) as u64,
        });
    }
    let sha = hex_digest(&blob);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: "f64le".to_string(),
        sha256: sha,
        entries,
    };
    let bin_path = dir.join("params.bin");
    let mut f = fs::File::create(&bin_path).map_err(|e| io_err(&bin_path, e))?;
    f.write_all(&blob).map_err(|e| io_err(&bin_path, e))?;
    let man_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&man_path, json).map_err(|e| io_err(&man_path, e))?;
    Ok(())
}

/// Load the checkpoint at `dir` into an existing store. Every parameter in
/// the store must be present in the checkpoint with a matching shape.
pub fn load_into(store: &mut ParamStore, dir: &Path) -> Result<(), CheckpointError> {
    let raw = read_raw(dir)?;
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let expected = store.get(id).shape.clone();
        let (shape, values) = raw
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, s, v)| (s.clone(), v.clone()))
            .ok_or(CheckpointError::MissingParam { name: name.clone() })?;
        if shape != expected {
            return Err(CheckpointError::ShapeMismatch {
                name,
                found: shape,
                expected,
            });
        }
        store.get_mut(id).values = values;
    }
    Ok(())
}

/// Read a checkpoint as a standalone list of (name, shape, values).
pub fn read_raw(dir: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>, CheckpointError> {
    let man_path = dir.join("manifest.json");
    let json = fs::read_to_string(&man_path).map_err(|e| io_err(&man_path, e))?;
    let manifest: Manifest = serde_json::from_str(&json)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version(manifest.format_version));
    }
    if manifest.dtype != "f64le" {
        return Err(CheckpointError::Dtype(manifest.dtype));
    }
    let bin_path = dir.join("params.bin");
    let mut blob = Vec::new();
    fs::File::open(&bin_path)
        .map_err(|e| io_err(&bin_path, e))?
        .read_to_end(&mut blob)
        .map_err(|e| io_err(&bin_path, e))?;
    if hex_digest(&blob) != manifest.sha256 {
        return Err(CheckpointError::Corrupt(
            "sha256 of params.bin does not match manifest".to_string(),
        ));
    }
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let start = e.offset_bytes as usize;
        let end = start + e.byte_len as usize;
        if end > blob.len() || e.byte_len % 8 != 0 {
            return Err(CheckpointError::Corrupt(format!(
                "entry {} spans {}..{} outside blob of {} bytes",
                e.name,
                start,
                end,
                blob.len()
            )));
        }
        let n: usize = e.shape.iter().product();
        if n * 8 != e.byte_len as usize {
            return Err(CheckpointError::Corrupt(format!(
                "entry {} shape {:?} disagrees with byte length {}",
                e.name, e.shape, e.byte_len
            )));
        }
        let mut values = Vec::with_capacity(n);
        for chunk in blob[start..end].chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        out.push((e.name.clone(), e.shape.clone(), values));
    }
    Ok(out)
}

/// Build a fresh store directly from a checkpoint (all parameters trainable).
pub fn load_store(dir: &Path) -> Result<ParamStore, CheckpointError> {
    let raw = read_raw(dir)?;
    let mut store = ParamStore::new();
    for (name, shape, values) in raw {
        store.register(&name, DiffArray::new(shape, values, true));
    }
    Ok(store)
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let d = h.finalize();
    let mut s = String::with_capacity(64);
    for b in d {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
