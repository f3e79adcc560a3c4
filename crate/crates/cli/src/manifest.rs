use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use corpusscope::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Everything needed to rerun a subcommand. The timestamp is the only field
/// that differs between identical runs, and it never appears in a result
/// file.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub created_unix: u64,
}

/// An output directory that remembers what was written to it.
pub struct OutDir {
    root: PathBuf,
    manifest: RunManifest,
}

impl OutDir {
    pub fn create(root: &Path, subcommand: &str, seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: RunManifest {
                tool: "corpusscope",
                version: env!("CARGO_PKG_VERSION"),
                subcommand: subcommand.to_owned(),
                argv: std::env::args().collect(),
                seed,
                config: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                created_unix: 0,
            },
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn config(&mut self, config: &impl Serialize) -> Result<()> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.manifest
            .outputs
            .insert(name.to_owned(), hex::encode(Sha256::digest(contents.as_bytes())));
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let mut json = serde_json::to_string_pretty(&self.manifest)?;
        json.push('\n');
        let path = self.root.join("manifest.json");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}
