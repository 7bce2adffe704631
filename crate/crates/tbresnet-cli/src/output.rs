//! Output directory handling: deterministic file writes plus a manifest.
//!
//! Every command ends by writing `manifest.json` listing the files it
//! produced and a hash of the effective configuration, so reruns can be
//! compared byte for byte. Nothing here records wall-clock time.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use tbresnet::error::{Error, Result};

/// Collects relative paths of files written under one output directory.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: String,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Records a file written directly to `self.path(name)` by other code.
    pub fn record(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    /// Writes the manifest last so its file list covers everything else.
    pub fn finish<T: Serialize>(mut self, command: &str, effective_config: &T) -> Result<()> {
        let config_json = serde_json::to_string_pretty(effective_config)?;
        let mut config_json = config_json;
        config_json.push('\n');
        self.write_text("run_config.json", &config_json)?;

        let mut hasher = Sha256::new();
        hasher.update(config_json.as_bytes());
        let config_sha256: String = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();

        self.files.push("manifest.json".to_string());
        self.files.sort();
        let manifest = Manifest {
            command,
            config_sha256,
            files: self.files.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.path("manifest.json");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
