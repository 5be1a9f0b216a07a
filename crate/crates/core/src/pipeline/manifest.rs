use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, write_file, ExperimentConfig, PipelineError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub version: String,
    pub seed: u64,
    pub variant: String,
    pub config_hash: String,
    /// Relative path (forward slashes) to SHA-256 of the file contents.
    pub files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON form of `cfg`, ignoring the output directory.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = PathBuf::new();
    sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), PipelineError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root).expect("walk stays under root");
        let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        let rel = rel.join("/");
        if rel == MANIFEST_FILE || rel == "config.json" {
            continue;
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        out.insert(rel, sha256_hex(&bytes));
    }
    Ok(())
}

/// Hashes every file under `root` and writes `manifest.json`.
///
/// `config.json` is left out because it records the output directory.
pub fn build_manifest(cfg: &ExperimentConfig, root: &Path) -> Result<Manifest, PipelineError> {
    let mut files = BTreeMap::new();
    collect(root, root, &mut files)?;
    let manifest = Manifest {
        schema_version: 1,
        version: concat!("v", env!("CARGO_PKG_VERSION")).to_string(),
        seed: cfg.seed,
        variant: cfg.variant.to_string(),
        config_hash: config_hash(cfg),
        files,
    };
    write_file(&root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}
