//! Checkpoint serialization.
//!
//! Layout: magic "HOGF", version u32 LE, header length u64 LE, JSON header
//! (config echo, step counter, parameter manifest with name/shape/offset/
//! length/sha256, optional extra-blob manifest for optimizer state), then
//! raw little-endian f32 blobs. Roundtrips are bit-exact.

use super::{build_model, HogformerModel, ModelConfig};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"HOGF";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob section.
    offset: u64,
    /// Byte length.
    len: u64,
    sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    params: Vec<BlobEntry>,
    extras: Vec<BlobEntry>,
}

pub struct LoadedCheckpoint {
    pub model: HogformerModel<f32>,
    pub step: u64,
    /// Optimizer or other auxiliary blobs, in stored order.
    pub extras: Vec<(String, Vec<f32>)>,
}

impl std::fmt::Debug for LoadedCheckpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoadedCheckpoint")
            .field("step", &self.step)
            .field("params", &self.model.parameters().len())
            .field("extras", &self.extras.len())
            .finish()
    }
}

fn blob_bytes(data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn sha_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Write a checkpoint; `extras` carries auxiliary blobs such as optimizer
/// moments, stored after the parameters.
pub fn save_checkpoint(
    model: &HogformerModel<f32>,
    path: &Path,
    step: u64,
    extras: &[(String, Vec<f32>)],
) -> Result<()> {
    let mut blob = Vec::new();
    let mut params = Vec::new();
    for (name, t) in model.parameters() {
        let bytes = blob_bytes(&t.data());
        params.push(BlobEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: blob.len() as u64,
            len: bytes.len() as u64,
            sha256: sha_hex(&bytes),
        });
        blob.extend_from_slice(&bytes);
    }
    let mut extra_entries = Vec::new();
    for (name, data) in extras {
        let bytes = blob_bytes(data);
        extra_entries.push(BlobEntry {
            name: name.clone(),
            shape: vec![data.len()],
            offset: blob.len() as u64,
            len: bytes.len() as u64,
            sha256: sha_hex(&bytes),
        });
        blob.extend_from_slice(&bytes);
    }
    let header = Header {
        config: model.config.clone(),
        step,
        params,
        extras: extra_entries,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialize: {e}")))?;

    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(header_json.len() as u64).to_le_bytes())?;
    f.write_all(&header_json)?;
    f.write_all(&blob)?;
    Ok(())
}

fn decode_blob(bytes: &[u8], entry: &BlobEntry, path: &Path) -> Result<Vec<f32>> {
    let start = entry.offset as usize;
    let end = start + entry.len as usize;
    if end > bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{}: truncated blob '{}' ({} bytes needed, {} available)",
            path.display(),
            entry.name,
            entry.len,
            bytes.len().saturating_sub(start)
        )));
    }
    let chunk = &bytes[start..end];
    if sha_hex(chunk) != entry.sha256 {
        return Err(Error::Checkpoint(format!(
            "{}: checksum failure in blob '{}'",
            path.display(),
            entry.name
        )));
    }
    Ok(chunk
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Load a checkpoint, rebuilding the model from the config echo. When
/// `expected_config` is given it must match the echo exactly.
pub fn load_checkpoint(path: &Path, expected_config: Option<&ModelConfig>) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: corrupt header (bad magic)",
            path.display()
        )));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: version mismatch: file has {version}, this build reads {VERSION}",
            path.display()
        )));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + hlen {
        return Err(Error::Checkpoint(format!("{}: truncated header", path.display())));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + hlen])
        .map_err(|e| Error::Checkpoint(format!("{}: header parse: {e}", path.display())))?;
    if let Some(exp) = expected_config {
        if *exp != header.config {
            return Err(Error::Checkpoint(format!(
                "{}: config conflict: checkpoint echo differs from the expected configuration",
                path.display()
            )));
        }
    }

    let model = build_model::<f32>(&header.config, 0)?;
    let by_name: HashMap<&str, &crate::tensor::Tensor<f32>> =
        model.parameters().iter().map(|(n, t)| (n.as_str(), t)).collect();
    let blob = &bytes[16 + hlen..];

    let mut seen = std::collections::HashSet::new();
    for entry in &header.params {
        let t = by_name.get(entry.name.as_str()).ok_or_else(|| {
            Error::Checkpoint(format!(
                "{}: unknown parameter name '{}'",
                path.display(),
                entry.name
            ))
        })?;
        if t.shape() != &entry.shape[..] {
            return Err(Error::Checkpoint(format!(
                "{}: parameter '{}' has shape {:?}, expected {:?}",
                path.display(),
                entry.name,
                entry.shape,
                t.shape()
            )));
        }
        let data = decode_blob(blob, entry, path)?;
        t.set_data(&data);
        seen.insert(entry.name.clone());
    }
    for (name, _) in model.parameters() {
        if !seen.contains(name) {
            return Err(Error::Checkpoint(format!(
                "{}: missing parameter '{}'",
                path.display(),
                name
            )));
        }
    }

    let mut extras = Vec::new();
    for entry in &header.extras {
        extras.push((entry.name.clone(), decode_blob(blob, entry, path)?));
    }
    Ok(LoadedCheckpoint { model, step: header.step, extras })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("hogformer_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let cfg = ModelConfig::grad_check();
        let model = build_model::<f32>(&cfg, 5).unwrap();
        let p1 = tmp("a.hogf");
        let p2 = tmp("b.hogf");
        save_checkpoint(&model, &p1, 12, &[("m.stem".into(), vec![0.5, -0.25])]).unwrap();
        let loaded = load_checkpoint(&p1, None).unwrap();
        assert_eq!(loaded.step, 12);
        assert_eq!(loaded.extras[0].1, vec![0.5, -0.25]);
        save_checkpoint(&loaded.model, &p2, loaded.step, &[("m.stem".into(), loaded.extras[0].1.clone())]).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = ModelConfig::grad_check();
        let model = build_model::<f32>(&cfg, 6).unwrap();
        let p = tmp("c.hogf");
        save_checkpoint(&model, &p, 0, &[]).unwrap();
        let loaded = load_checkpoint(&p, Some(&cfg)).unwrap();
        for ((na, ta), (nb, tb)) in model.parameters().iter().zip(loaded.model.parameters()) {
            assert_eq!(na, nb);
            assert_eq!(ta.to_vec(), tb.to_vec(), "{na}");
        }
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let cfg = ModelConfig::grad_check();
        let model = build_model::<f32>(&cfg, 7).unwrap();
        let p = tmp("d.hogf");
        save_checkpoint(&model, &p, 0, &[]).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        std::fs::write(&p, bytes).unwrap();
        let err = load_checkpoint(&p, None).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }

    #[test]
    fn config_conflict_is_explicit() {
        let cfg = ModelConfig::grad_check();
        let model = build_model::<f32>(&cfg, 8).unwrap();
        let p = tmp("e.hogf");
        save_checkpoint(&model, &p, 0, &[]).unwrap();
        let other = ModelConfig::tiny();
        let err = load_checkpoint(&p, Some(&other)).unwrap_err().to_string();
        assert!(err.contains("config conflict"), "{err}");
    }

    #[test]
    fn version_and_magic_are_checked() {
        let p = tmp("f.hogf");
        std::fs::write(&p, b"NOPE....").unwrap();
        assert!(load_checkpoint(&p, None).unwrap_err().to_string().contains("magic"));
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"HOGF");
        bytes.extend_from_slice(&9u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(load_checkpoint(&p, None)
            .unwrap_err()
            .to_string()
            .contains("version mismatch"));
    }
}
