//! Binary checkpoint: magic, a length-prefixed JSON header, then the scorer
//! parameters and the domain weights as little-endian `f64`.
//!
//! ```text
//! b"DPRMCKPT" | u32 LE header length | header JSON | φ (param_count × f64 LE) | α (num_domains × f64 LE)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PrmArch, PrmError, PrmParams};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DPRMCKPT";

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    arch: PrmArch,
    param_count: usize,
    num_domains: usize,
    training_step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub prm: PrmParams,
    pub alpha: Vec<f64>,
    pub training_step: u64,
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), PrmError> {
    let header = Header {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        arch: ckpt.prm.arch.clone(),
        param_count: ckpt.prm.params.len(),
        num_domains: ckpt.alpha.len(),
        training_step: ckpt.training_step,
    };
    let json = serde_json::to_vec(&header).map_err(|e| PrmError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(12 + json.len() + 8 * (header.param_count + header.num_domains));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in ckpt.prm.params.values().iter().chain(&ckpt.alpha) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect()
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, PrmError> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| PrmError::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(bad(&format!("unsupported schema version {}", header.schema_version)));
    }
    let data = &bytes[12 + hlen..];
    if data.len() != 8 * (header.param_count + header.num_domains) {
        return Err(bad("parameter block length does not match header"));
    }
    let values = read_f64s(&data[..8 * header.param_count]);
    let alpha = read_f64s(&data[8 * header.param_count..]);
    let prm = PrmParams::from_values(header.arch, values)?;
    Ok(Checkpoint { prm, alpha, training_step: header.training_step })
}
