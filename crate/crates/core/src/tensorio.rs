//! Tensor file format: little-endian flat `f64` binary with a JSON sidecar
//! carrying shape and dtype. A tensor saved under base path `x` produces
//! `x.bin` and `x.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Serialize, Deserialize)]
pub struct TensorSidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
}

pub fn bin_path(base: &Path) -> PathBuf {
    base.with_extension("bin")
}

pub fn sidecar_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

pub fn save_tensor(base: &Path, tensor: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(tensor.len() * 8);
    for v in tensor.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let bp = bin_path(base);
    fs::write(&bp, &bytes).map_err(|e| Error::io(bp.display().to_string(), e))?;
    let sidecar = TensorSidecar {
        shape: tensor.shape().to_vec(),
        dtype: "f64".into(),
    };
    let sp = sidecar_path(base);
    fs::write(&sp, serde_json::to_string_pretty(&sidecar).unwrap())
        .map_err(|e| Error::io(sp.display().to_string(), e))?;
    Ok(())
}

pub fn load_tensor(base: &Path) -> Result<Tensor> {
    let sp = sidecar_path(base);
    let sidecar_text =
        fs::read_to_string(&sp).map_err(|e| Error::io(sp.display().to_string(), e))?;
    let sidecar: TensorSidecar =
        serde_json::from_str(&sidecar_text).map_err(|e| Error::Format {
            path: sp.display().to_string(),
            detail: e.to_string(),
        })?;
    if sidecar.dtype != "f64" {
        return Err(Error::Format {
            path: sp.display().to_string(),
            detail: format!("unsupported dtype {}", sidecar.dtype),
        });
    }
    let bp = bin_path(base);
    let bytes = fs::read(&bp).map_err(|e| Error::io(bp.display().to_string(), e))?;
    let n: usize = sidecar.shape.iter().product();
    if bytes.len() != n * 8 {
        return Err(Error::Format {
            path: bp.display().to_string(),
            detail: format!("expected {} bytes for shape {:?}, found {}", n * 8, sidecar.shape, bytes.len()),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(&sidecar.shape, data)
}

/// SHA-256 hex digest of a file's bytes.
pub fn file_checksum(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_string(&hasher.finalize()))
}

/// SHA-256 hex digest of a tensor's data bytes (shape then values).
pub fn tensor_checksum(tensor: &Tensor) -> String {
    let mut hasher = Sha256::new();
    for d in tensor.shape() {
        hasher.update((*d as u64).to_le_bytes());
    }
    for v in tensor.data() {
        hasher.update(v.to_le_bytes());
    }
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
