//! Shared artifact plumbing: every run writes its resolved config and a
//! manifest with content hashes of its inputs, and a completed run with
//! identical inputs is a no-op unless forced.

pub mod ablate;
pub mod analyze_tokens;
pub mod eval;
pub mod gate_report;
pub mod gen_data;
pub mod pretrain;
pub mod train_igc;

use anyhow::{Context, Result};
use igc_core::array::checkpoint::hex_digest;
use igc_core::config::RunConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    /// Content hash per input artifact path.
    pub inputs: BTreeMap<String, String>,
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes =
        fs::read(path).with_context(|| format!("cannot read input {}", path.display()))?;
    Ok(hex_digest(&bytes))
}

/// Hash a checkpoint or dataset directory by its manifest-bearing files.
pub fn artifact_hash(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut combined = String::new();
        for name in [
            "manifest.json",
            "params.bin",
            "dataset.jsonl",
            "pretrain.jsonl",
            "checkpoint/manifest.json",
            "checkpoint/params.bin",
        ] {
            let p = path.join(name);
            if p.exists() {
                combined.push_str(&file_hash(&p)?);
            }
        }
        Ok(hex_digest(combined.as_bytes()))
    } else {
        file_hash(path)
    }
}

pub struct Stage<'a> {
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub out: &'a Path,
    pub inputs: Vec<(&'a str, PathBuf)>,
}

impl<'a> Stage<'a> {
    /// True when an identical completed run already sits in `out`.
    pub fn is_complete(&self) -> Result<bool> {
        let manifest_path = self.out.join("manifest.json");
        if !manifest_path.exists() {
            return Ok(false);
        }
        let text = fs::read_to_string(&manifest_path)?;
        let existing: Manifest = match serde_json::from_str(&text) {
            Ok(m) => m,
            Err(_) => return Ok(false),
        };
        Ok(existing == self.manifest()?)
    }

    fn manifest(&self) -> Result<Manifest> {
        let mut inputs = BTreeMap::new();
        for (name, path) in &self.inputs {
            inputs.insert(name.to_string(), artifact_hash(path)?);
        }
        Ok(Manifest {
            command: self.command.to_string(),
            config_hash: self.config.content_hash(),
            inputs,
        })
    }

    /// Stamp the resolved config and the manifest next to the outputs.
    pub fn finalize(&self) -> Result<()> {
        fs::create_dir_all(self.out)?;
        fs::write(self.out.join("config.toml"), self.config.to_toml())?;
        let manifest = self.manifest()?;
        fs::write(
            self.out.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).map_err(anyhow::Error::from)
}

/// A model argument may point at a checkpoint directory itself or at a
/// run directory holding `checkpoint/`.
pub fn resolve_checkpoint(dir: &Path) -> PathBuf {
    if dir.join("params.bin").exists() {
        dir.to_path_buf()
    } else {
        dir.join("checkpoint")
    }
}

pub fn parse_mode(s: &str) -> Result<igc_core::config::Mode> {
    use igc_core::config::Mode;
    Ok(match s {
        "plain" => Mode::Plain,
        "igc" => Mode::Igc,
        "igc+shortcut" => Mode::IgcShortcut,
        "shortcut-only" => Mode::ShortcutOnly,
        other => anyhow::bail!(
            "unknown mode {other:?}; expected plain, igc, igc+shortcut or shortcut-only"
        ),
    })
}
