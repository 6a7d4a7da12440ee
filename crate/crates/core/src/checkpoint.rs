//! On-disk parameter checkpoints.
//!
//! Binary layout (integers little-endian u32, floats little-endian f64):
//!
//! ```text
//! offset  size                 field
//! 0       8                    magic  b"GRIDQNET"
//! 8       4                    format version (1)
//! 12      4                    input_dim
//! 16      4                    hidden width (both layers)
//! 20      4                    out_dim
//! 24      hidden*input_dim*8   w1, row-major [hidden][input_dim]
//! ...     hidden*8             b1
//! ...     hidden*hidden*8      w2, row-major [hidden][hidden]
//! ...     hidden*8             b2
//! ...     out_dim*hidden*8     w3, row-major [out_dim][hidden]
//! ...     out_dim*8            b3
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::nn::NetParams;

const MAGIC: &[u8; 8] = b"GRIDQNET";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

pub fn to_bytes(params: &NetParams) -> Vec<u8> {
    let floats = params.parameter_count();
    let mut out = Vec::with_capacity(24 + 8 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(params.hidden as u32).to_le_bytes());
    out.extend_from_slice(&(params.out_dim as u32).to_le_bytes());
    for tensor in [&params.w1, &params.b1, &params.w2, &params.b2, &params.w3, &params.b3] {
        for v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<NetParams, CheckpointError> {
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::Format("missing GRIDQNET header".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    if word(8) != VERSION as usize {
        return Err(CheckpointError::Format(format!("unsupported version {}", word(8))));
    }
    let (input_dim, hidden, out_dim) = (word(12), word(16), word(20));
    let mut params = NetParams::zeros(input_dim, hidden, out_dim);
    let expected = 24 + 8 * params.parameter_count();
    if bytes.len() != expected {
        return Err(CheckpointError::Format(format!(
            "expected {expected} bytes for dims ({input_dim}, {hidden}, {out_dim}), got {}",
            bytes.len()
        )));
    }
    let mut at = 24;
    for tensor in params.tensors_mut() {
        for v in tensor.iter_mut() {
            *v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            at += 8;
        }
    }
    Ok(params)
}

pub fn save(params: &NetParams, path: &Path) -> Result<(), CheckpointError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<NetParams, CheckpointError> {
    from_bytes(&fs::read(path)?)
}
