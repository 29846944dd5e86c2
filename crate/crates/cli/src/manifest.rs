use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Result, RunConfig};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub config: RunConfig,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn collect(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, root, out)?;
        } else if path.strip_prefix(root).ok() != Some(Path::new(MANIFEST_NAME)) {
            out.push(path);
        }
    }
    Ok(())
}

/// Hashes every file under `dir` and writes `dir/manifest.json`.
pub fn write_manifest(dir: &Path, command: &str, config: &RunConfig) -> Result<Manifest> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    files.sort();
    let mut artifacts = Vec::with_capacity(files.len());
    for f in files {
        let bytes = fs::read(&f)?;
        let rel = f.strip_prefix(dir).expect("collected under dir");
        let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        artifacts.push(ArtifactEntry { path, sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
    }
    let manifest = Manifest {
        command: command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: sha256_hex(config.to_json().as_bytes()),
        config: config.clone(),
        artifacts,
    };
    fs::write(dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_NAME))?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn lists_nested_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("a/b")).unwrap();
        fs::write(dir.path().join("a/b/x.csv"), "1,2\n").unwrap();
        fs::write(dir.path().join("top.txt"), "hi").unwrap();
        let m = write_manifest(dir.path(), "test", &RunConfig::default()).unwrap();
        let paths: Vec<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(paths, ["a/b/x.csv", "top.txt"]);
        assert_eq!(m.artifacts[1].sha256, sha256_hex(b"hi"));
        let again = write_manifest(dir.path(), "test", &RunConfig::default()).unwrap();
        assert_eq!(again.artifacts.len(), 2);
        assert_eq!(read_manifest(dir.path()).unwrap(), again);
    }
}
