//! Run manifests: every command writes `manifest.toml` into its output
//! directory, containing the fully resolved configuration plus a
//! `[manifest]` table of input/output content hashes.
//!
//! The configuration part uses the same keys `--config` accepts, so a
//! manifest is itself a valid config: rerunning from it reproduces the
//! run's artifacts bit for bit (per seed and build). Nothing
//! time-dependent goes into the config part; wall-clock measurements live
//! under `[manifest]`, which reruns ignore.

use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::task::{sha256_file, DatasetRecord};

#[derive(Debug, Default, Serialize)]
pub struct ManifestMeta {
    pub command: String,
    pub tool_version: String,
    /// SHA-256 of input files, keyed by role ("config", "dataset", ...).
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of emitted artifacts, keyed by file name.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub artifacts: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetRecord>,
    /// Free-form notes: resolved beta, wall-clock seconds, sampler
    /// adaptation state, and similar run-level facts.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

impl ManifestMeta {
    pub fn new(command: &str) -> Self {
        ManifestMeta {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            ..Default::default()
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.insert(key.to_string(), value.to_string());
    }

    pub fn input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        self.inputs
            .insert(role.to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Records an artifact hash; call after the file is fully written.
    pub fn artifact(&mut self, name: &str, path: &Path) -> CliResult<()> {
        self.artifacts
            .insert(name.to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Hashes every regular file under a checkpoint directory.
    pub fn artifact_dir(&mut self, label: &str, dir: &Path) -> CliResult<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| CliError::data(format!("cannot list {}: {e}", dir.display())))?
            .collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.is_file() {
                let name = format!("{label}/{}", entry.file_name().to_string_lossy());
                self.artifact(&name, &path)?;
            }
        }
        Ok(())
    }
}

/// Manifest for commands that run without a config (figure kinds that
/// only replot CSV artifacts): just the `[manifest]` table.
pub fn write_meta_only(out_dir: &Path, meta: &ManifestMeta) -> CliResult<std::path::PathBuf> {
    let mut root = toml::Table::new();
    let meta_value = toml::Value::try_from(meta)
        .map_err(|e| CliError::config(format!("manifest metadata did not serialize: {e}")))?;
    root.insert("manifest".to_string(), meta_value);
    let text = toml::to_string_pretty(&root)?;
    let path = out_dir.join("manifest.toml");
    std::fs::write(&path, text)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

/// Writes `manifest.toml` under `out_dir` and returns its path.
pub fn write_manifest(
    out_dir: &Path,
    config: &RunConfig,
    meta: &ManifestMeta,
) -> CliResult<std::path::PathBuf> {
    let mut config = config.clone();
    config.manifest = None;
    let mut root = toml::Table::try_from(&config)
        .map_err(|e| CliError::config(format!("config did not serialize: {e}")))?;
    let meta_value = toml::Value::try_from(meta)
        .map_err(|e| CliError::config(format!("manifest metadata did not serialize: {e}")))?;
    root.insert("manifest".to_string(), meta_value);
    let text = toml::to_string_pretty(&root)?;
    let path = out_dir.join("manifest.toml");
    std::fs::write(&path, text)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}
