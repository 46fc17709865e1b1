//! IDX container format used by the MNIST distribution.
//!
//! Layout: a big-endian `u32` magic `0x0000_08NN` (`0x08` = unsigned byte
//! payload, `NN` = number of dimensions), `NN` big-endian `u32` sizes, then
//! the raw bytes in row-major order.

use std::fs;
use std::path::Path;
use thiserror::Error;

pub const MAGIC_LABELS: u32 = 0x0000_0801;
pub const MAGIC_IMAGES: u32 = 0x0000_0803;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad magic 0x{0:08x}: expected an unsigned-byte IDX file")]
    BadMagic(u32),
    #[error("truncated IDX data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("IDX dimensions overflow the addressable size")]
    DimensionOverflow,
    #[error("IDX file has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("expected a {expected}-dimensional IDX tensor, found {found} dimensions")]
    Rank { expected: usize, found: usize },
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
}

/// An unsigned-byte tensor decoded from an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    /// Number of items along the first dimension.
    pub fn len(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes per item (product of the trailing dimensions).
    pub fn item_size(&self) -> usize {
        self.dims.iter().skip(1).product()
    }

    pub fn item(&self, i: usize) -> &[u8] {
        let s = self.item_size();
        &self.data[i * s..(i + 1) * s]
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, IdxError> {
    let magic = be_u32(bytes, 0)?;
    let ndim = (magic & 0xff) as usize;
    if magic & 0xffff_ff00 != 0x0000_0800 || ndim == 0 {
        return Err(IdxError::BadMagic(magic));
    }
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        dims.push(be_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndim;
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(IdxError::DimensionOverflow)?;
    let expected = header.checked_add(payload).ok_or(IdxError::DimensionOverflow)?;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IdxError::TrailingBytes(bytes.len() - expected));
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxTensor, IdxError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| IdxError::Read {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_idx(&bytes)
}

pub fn encode_idx(tensor: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * tensor.dims.len() + tensor.data.len());
    out.extend_from_slice(&(0x0000_0800u32 | tensor.dims.len() as u32).to_be_bytes());
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&tensor.data);
    out
}
