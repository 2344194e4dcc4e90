//! Binary checkpoint format.
//!
//! ```text
//! "PSVC" | version: u16 LE | header_len: u32 LE | header: UTF-8 JSON
//!        | payload: little-endian f32 data | crc32(payload): u32 LE
//! ```
//!
//! The header is `{"entries": [{name, dtype, shape, byte_offset, byte_len,
//! trainable}, ...], "meta": <any JSON>}`; offsets are relative to the start
//! of the payload. `meta` is optional and carries model configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamGroup;
use super::tensor::Tensor;
use crate::error::{CheckpointError, Error, Result};

pub const MAGIC: &[u8; 4] = b"PSVC";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryHeader {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub byte_offset: usize,
    pub byte_len: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    entries: Vec<EntryHeader>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

/// Parameter groups plus optional configuration metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub groups: Vec<ParamGroup>,
    pub meta: Option<serde_json::Value>,
}

pub fn encode(groups: &[ParamGroup], meta: Option<&serde_json::Value>) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(groups.len());
    let mut payload = Vec::new();
    for g in groups {
        let bytes = g.tensor.to_le_bytes();
        entries.push(EntryHeader {
            name: g.name.clone(),
            dtype: "f32".into(),
            shape: g.tensor.shape().to_vec(),
            byte_offset: payload.len(),
            byte_len: bytes.len(),
            trainable: g.trainable,
        });
        payload.extend_from_slice(&bytes);
    }
    let header = Header {
        entries,
        meta: meta.cloned(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::json("checkpoint header", e))?;
    let mut out = Vec::with_capacity(10 + header.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 10 {
        return Err(CheckpointError::CorruptHeader("file ends inside the preamble".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let hend = 10usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| CheckpointError::CorruptHeader("header length exceeds file size".into()))?;
    let header: Header = serde_json::from_slice(&bytes[10..hend])
        .map_err(|e| CheckpointError::CorruptHeader(e.to_string()))?;

    let mut expected = 0usize;
    for e in &header.entries {
        if e.dtype != "f32" {
            return Err(CheckpointError::CorruptHeader(format!("unsupported dtype {}", e.dtype)));
        }
        let numel: usize = e.shape.iter().product();
        if e.byte_offset != expected || e.byte_len != numel * 4 {
            return Err(CheckpointError::CorruptHeader(format!(
                "inconsistent extent for {}",
                e.name
            )));
        }
        expected += e.byte_len;
    }
    let available = bytes.len() - hend;
    if available < expected + 4 {
        return Err(CheckpointError::Truncated {
            expected: expected + 4,
            found: available,
        });
    }
    let payload = &bytes[hend..hend + expected];
    let stored = u32::from_le_bytes(bytes[hend + expected..hend + expected + 4].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }

    let mut groups = Vec::with_capacity(header.entries.len());
    for e in header.entries {
        let data = payload[e.byte_offset..e.byte_offset + e.byte_len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(e.shape, data).map_err(|err| CheckpointError::CorruptHeader(err.to_string()))?;
        groups.push(ParamGroup {
            name: e.name,
            tensor,
            trainable: e.trainable,
        });
    }
    Ok(Checkpoint {
        groups,
        meta: header.meta,
    })
}

pub fn save_checkpoint(groups: &[ParamGroup], path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint_with_meta(groups, None, path)
}

pub fn save_checkpoint_with_meta(
    groups: &[ParamGroup],
    meta: Option<&serde_json::Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(groups, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}
