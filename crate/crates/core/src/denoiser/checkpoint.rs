// SPDX-License-Identifier: Apache-2.0

//! Checkpoint container: a versioned binary file of named f64 tensors plus a
//! JSON sidecar holding the network and training configuration.
//!
//! Binary layout (little endian): magic `LGDN`, u32 version, u32 tensor
//! count, then per tensor a u32 name length, the UTF-8 name, a u32 rank,
//! u64 dims and the f64 values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::{DenoiserParameters, NetworkConfig, TensorSpec};
use super::training::TrainingConfig;

const MAGIC: &[u8; 4] = b"LGDN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub network: NetworkConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
}

/// Path of the JSON sidecar next to a binary checkpoint.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

pub fn encode_tensors(params: &DenoiserParameters) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let tensors: Vec<_> = params.tensors().collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (spec, values) in tensors {
        out.extend_from_slice(&(spec.name.len() as u32).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.extend_from_slice(&(spec.shape.len() as u32).to_le_bytes());
        for &d in &spec.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Format("truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(TensorSpec, Vec<f64>)>, CheckpointError> {
    let mut r = Reader { bytes };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Format(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.filter(|&n| n.saturating_mul(8) <= r.bytes.len())
            .ok_or_else(|| CheckpointError::Format(format!("tensor {name} overruns the file")))?;
        let values = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((TensorSpec { name, shape }, values));
    }
    if !r.bytes.is_empty() {
        return Err(CheckpointError::Format("trailing bytes".into()));
    }
    Ok(tensors)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save(path: &Path, params: &DenoiserParameters, sidecar: &Sidecar) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_tensors(params)).map_err(io(path))?;
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(sidecar)?).map_err(io(&side))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(DenoiserParameters, Sidecar), CheckpointError> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(io(&side))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    let params = DenoiserParameters::from_tensors(sidecar.network.clone(), decode_tensors(&bytes)?)
        .map_err(CheckpointError::Format)?;
    Ok((params, sidecar))
}
