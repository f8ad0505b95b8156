//! Binary parameter layout.
//!
//! An MLP block is laid out as
//!
//! ```text
//! magic        4 bytes  "MLPW"
//! version      u32 LE   (currently 1)
//! activation   u8       (0 = relu, 1 = tanh)
//! n_sizes      u32 LE
//! sizes        n_sizes × u32 LE
//! per layer k: weights (sizes[k+1] × sizes[k], row-major) then biases (sizes[k]),
//!              all f64 LE
//! ```

use super::matrix::Matrix;
use super::mlp::{Activation, MlpParams};
use crate::error::{Error, Result};

pub const MLP_MAGIC: &[u8; 4] = b"MLPW";
pub const MLP_VERSION: u32 = 1;

pub fn write_mlp(out: &mut Vec<u8>, params: &MlpParams) {
    out.extend_from_slice(MLP_MAGIC);
    out.extend_from_slice(&MLP_VERSION.to_le_bytes());
    out.push(params.activation().tag());
    let sizes = params.layer_sizes();
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for &s in sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for (w, b) in params.weights().iter().zip(params.biases()) {
        for v in w.as_slice().iter().chain(b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn read_mlp(reader: &mut ByteReader<'_>) -> Result<MlpParams> {
    let magic = reader.take(4)?;
    if magic != MLP_MAGIC {
        return Err(Error::Format(format!("bad MLP magic {magic:?}")));
    }
    let version = reader.u32()?;
    if version != MLP_VERSION {
        return Err(Error::Format(format!("unsupported MLP version {version}")));
    }
    let activation = Activation::from_tag(reader.u8()?)?;
    let n = reader.u32()? as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::Format(format!("implausible layer count {n}")));
    }
    let sizes = (0..n)
        .map(|_| reader.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in sizes.windows(2) {
        let w = reader.f64s(pair[0] * pair[1])?;
        weights.push(Matrix::from_vec(pair[1], pair[0], w)?);
        biases.push(reader.f64s(pair[1])?);
    }
    MlpParams::new(sizes, weights, biases, activation)
}

/// Cursor over a checkpoint byte buffer.
pub struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn is_at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
