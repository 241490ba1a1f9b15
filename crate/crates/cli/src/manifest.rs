use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Files written by one command, hashed into `manifest.json` at the end.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Registers a file that the caller has written under the output directory.
    pub fn add(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    pub fn write(&mut self, name: &str, body: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, body).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))?;
        self.add(name);
        Ok(())
    }

    /// Writes `manifest.json`: the command line, the resolved config, and a
    /// sha256 for every artifact.
    pub fn finish(self, command: &str, argv: &[String], config: Value) -> Result<(), CliError> {
        let mut hashes = serde_json::Map::new();
        for name in &self.files {
            let p = self.dir.join(name);
            let bytes = fs::read(&p)
                .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", p.display())))?;
            hashes.insert(name.clone(), Value::String(hex::encode(Sha256::digest(&bytes))));
        }
        let doc = json!({
            "command": command,
            "argv": argv,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "files": hashes,
        });
        let text = serde_json::to_string_pretty(&doc).expect("json value serialises");
        let p = self.dir.join("manifest.json");
        fs::write(&p, text + "\n")
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))
    }
}
