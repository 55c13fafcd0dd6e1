// SPDX-License-Identifier: Apache-2.0

//! Checkpoint files.
//!
//! ```text
//! "FCNC", u16 version, u32 config fingerprint, u32 tensor count
//! per tensor: u16 name length, name, u8 rank, u32 extents[rank], f32 payload
//! ```
//!
//! Everything little-endian; tensors are written in name order.

use std::fs;
use std::path::Path;

use super::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CKPT_MAGIC: &[u8; 4] = b"FCNC";
pub const CKPT_VERSION: u16 = 1;

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&params.fingerprint().to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated {what}: need {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decode a checkpoint, refusing it unless its fingerprint matches
/// `expected` (when given).
pub fn decode_checkpoint(bytes: &[u8], expected: Option<u32>) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").ok() != Some(CKPT_MAGIC.as_slice()) {
        return Err(Error::format(0, "bad magic, expected \"FCNC\""));
    }
    let version = r.u16("version")?;
    if version != CKPT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let fingerprint = r.u32("fingerprint")?;
    if let Some(want) = expected {
        if want != fingerprint {
            return Err(Error::format(
                6,
                format!("config fingerprint {fingerprint:08x} does not match {want:08x}"),
            ));
        }
    }
    let count = r.u32("tensor count")?;
    let mut params = ModelParams::new(fingerprint);
    for _ in 0..count {
        let at = r.pos as u64;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &b| a.checked_mul(b))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(at, format!("tensor {name} is too large")))?;
        let data = r
            .take(n, "payload")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        params
            .insert(&name, Tensor::new(&shape, data)?)
            .map_err(|e| Error::format(at, e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after the last tensor"));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io_at(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<u32>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    decode_checkpoint(&bytes, expected).map_err(|e| e.at(&path.display().to_string()))
}
