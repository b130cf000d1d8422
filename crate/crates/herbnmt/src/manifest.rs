//! Run-directory manifest: the config hash, the seed and a SHA-256 of every
//! file in the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{io_err, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Path relative to the run directory, `/`-separated, to content hash.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir).map_err(io_err(dir))?.collect::<std::io::Result<_>>().map_err(io_err(dir))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect(root, &p, out)?;
        } else if p != root.join(MANIFEST_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

impl RunManifest {
    /// Hashes everything under `root` except the manifest itself.
    pub fn scan(root: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        let mut paths = Vec::new();
        collect(root, root, &mut paths)?;
        let mut files = BTreeMap::new();
        for p in paths {
            let rel = p.strip_prefix(root).unwrap_or(&p);
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            files.insert(key, sha256_file(&p)?);
        }
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config_sha256: hex::encode(Sha256::digest(cfg.to_toml()?.as_bytes())),
            files,
        })
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(io_err(&path))
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path, line: 1, message: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use herbnmt_core::corpus::Preset;

    #[test]
    fn scan_hashes_every_file_but_itself() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "abc").unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), "").unwrap();
        let cfg = ExperimentConfig::for_preset(Preset::Desk, 1);
        let m = RunManifest::scan(dir.path(), &cfg).unwrap();
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::scan(dir.path(), &cfg).unwrap(), m);
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
        assert_eq!(m.files.len(), 2);
        assert_eq!(m.files["a.txt"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(m.files["sub/b.txt"], "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
