//! Output directory bookkeeping: every written artifact is recorded with its
//! SHA-256 and size in `manifest.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub artifacts: Vec<Artifact>,
}

/// Writes files under one output directory and remembers them.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    command: String,
    artifacts: Vec<Artifact>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>, command: &str) -> CliResult<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)
            .map_err(|e| CliError::usage(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self {
            root,
            command: command.to_string(),
            artifacts: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn write(&mut self, relative: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
        let contents = contents.as_ref();
        std::fs::write(&path, contents).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        self.record(relative, contents);
        Ok(path)
    }

    /// Records a file that was written by other code.
    pub fn register(&mut self, relative: &str) -> CliResult<()> {
        let path = self.root.join(relative);
        let contents =
            std::fs::read(&path).map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
        self.record(relative, &contents);
        Ok(())
    }

    fn record(&mut self, relative: &str, contents: &[u8]) {
        self.artifacts.retain(|a| a.path != relative);
        self.artifacts.push(Artifact {
            path: relative.to_string(),
            sha256: hex::encode(Sha256::digest(contents)),
            bytes: contents.len() as u64,
        });
    }

    pub fn finish(self) -> CliResult<Manifest> {
        let mut artifacts = self.artifacts;
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command: self.command,
            artifacts,
        };
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::runtime(format!("invalid manifest: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path().join("run"), "test").unwrap();
        out.write("b.txt", "hello").unwrap();
        out.write("a/nested.txt", "x").unwrap();
        out.write("b.txt", "abc").unwrap();
        let m = out.finish().unwrap();
        assert_eq!(m.artifacts.len(), 2);
        assert_eq!(m.artifacts[0].path, "a/nested.txt");
        assert_eq!(
            m.artifacts[1].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(read_manifest(&dir.path().join("run")).unwrap(), m);
    }
}
