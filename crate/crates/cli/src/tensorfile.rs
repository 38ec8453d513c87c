//! `FQTN` tensor files.
//!
//! Layout: magic `FQTN`, `u16` version, `u8` rank, `rank` × `u32` dims,
//! then the row-major payload as `f32`. All integers and floats are
//! little-endian. Images are stored with dims `[channels, height, width]`,
//! single maps as `[height, width]`.

use std::fs;
use std::path::Path;

use freqblend::{Scalar, Tensor};

use crate::error::{CliError, CliResult};

pub const MAGIC: [u8; 4] = *b"FQTN";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TensorFileError {
    #[error("bad magic {0:?}, expected \"FQTN\"")]
    Magic([u8; 4]),
    #[error("unsupported version {0}, expected {VERSION}")]
    Version(u16),
    #[error("truncated header")]
    Truncated,
    #[error("payload has {found} bytes, dims {dims:?} require {expected}")]
    Length {
        dims: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("invalid dims {0:?}")]
    Dims(Vec<usize>),
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorFileError> {
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(TensorFileError::Dims(dims));
        }
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(TensorFileError::Length {
                dims,
                expected: expected * 4,
                found: data.len() * 4,
            });
        }
        Ok(TensorFile { dims, data })
    }

    /// `[c, h, w]` tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        let data = t.as_slice().iter().map(|v| v.as_f64() as f32).collect();
        TensorFile {
            dims: t.shape().to_vec(),
            data,
        }
    }

    /// `[h, w]` tensor from a single-channel map.
    pub fn from_map<T: Scalar>(t: &Tensor<T>) -> Self {
        let data = t.as_slice().iter().map(|v| v.as_f64() as f32).collect();
        TensorFile {
            dims: vec![t.height(), t.width()],
            data,
        }
    }

    /// Rank-2 files become one-channel tensors, rank-3 files keep their layout.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>, TensorFileError> {
        let (c, h, w) = match self.dims[..] {
            [h, w] => (1, h, w),
            [c, h, w] => (c, h, w),
            _ => return Err(TensorFileError::Dims(self.dims.clone())),
        };
        let data = self.data.iter().map(|&v| T::lit(v as f64)).collect();
        Tensor::from_vec(c, h, w, data).map_err(|_| TensorFileError::Dims(self.dims.clone()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorFileError> {
        if bytes.len() < 7 {
            return Err(TensorFileError::Truncated);
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(TensorFileError::Magic(magic));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(TensorFileError::Version(version));
        }
        let rank = bytes[6] as usize;
        let body = &bytes[7..];
        if body.len() < 4 * rank {
            return Err(TensorFileError::Truncated);
        }
        let dims: Vec<usize> = body[..4 * rank]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let payload = &body[4 * rank..];
        let expected = dims
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| TensorFileError::Dims(dims.clone()))?;
        if payload.len() != expected {
            return Err(TensorFileError::Length {
                dims,
                expected,
                found: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(TensorFile { dims, data })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::io(path, e))
    }
}
