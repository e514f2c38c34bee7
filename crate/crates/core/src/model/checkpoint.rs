//! Parameter blob: 8-byte magic `HSPARAM1`, little-endian `u32` header
//! length, a JSON header `{"shape":{..},"len":d}`, then `d` little-endian
//! `f64` values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{MlpShape, ModelParams};

const MAGIC: &[u8; 8] = b"HSPARAM1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

#[derive(Serialize, Deserialize)]
struct Header {
    shape: MlpShape,
    len: usize,
}

pub fn save_params(path: &Path, params: &ModelParams) -> Result<(), CheckpointError> {
    let header = serde_json::to_vec(&Header {
        shape: params.shape,
        len: params.values.len(),
    })
    .expect("header serializes");
    let mut bytes = Vec::with_capacity(12 + header.len() + 8 * params.values.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header);
    for v in &params.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_params(path: &Path) -> Result<ModelParams, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |reason: String| CheckpointError::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("missing parameter blob magic".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_bytes = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| bad(e.to_string()))?;
    if header.len != header.shape.num_params() {
        return Err(bad(format!(
            "header length {} does not match shape ({} parameters)",
            header.len,
            header.shape.num_params()
        )));
    }
    let body = &bytes[12 + hlen..];
    if body.len() != 8 * header.len {
        return Err(bad(format!(
            "expected {} payload bytes, found {}",
            8 * header.len,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ModelParams {
        values,
        shape: header.shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{fork_rng, Purpose, StreamLabel};
    use crate::model::{init_params, InitScheme};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let mut rng = fork_rng(9, StreamLabel::new(Purpose::Init));
        let p = init_params(MlpShape::emnist_digits(), InitScheme::UniformFanIn, &mut rng);
        save_params(&path, &p).unwrap();
        assert_eq!(load_params(&path).unwrap(), p);
        let len = fs::metadata(&path).unwrap().len() as usize;
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(len - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_params(&path), Err(CheckpointError::Format { .. })));
    }
}
