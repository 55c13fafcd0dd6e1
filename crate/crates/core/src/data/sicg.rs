// SPDX-License-Identifier: Apache-2.0

//! SICG grid files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! 0   "SICG"
//! 4   u16 version (1)
//! 6   u32 T, u32 C, u32 H, u32 W, u32 start_day
//! 26  H·W mask bytes, 0 = land, 1 = ocean, row-major
//!     T·C·H·W f32 values, t-major then c, row, col
//! ```

use std::fs;
use std::path::Path;

use super::{Mask, SicSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SICG_MAGIC: &[u8; 4] = b"SICG";
pub const SICG_VERSION: u16 = 1;
pub const SICG_HEADER_LEN: usize = 26;

pub fn encode_sicg(seq: &SicSequence) -> Vec<u8> {
    let s = seq.data().shape();
    let mut out = Vec::with_capacity(SICG_HEADER_LEN + s[2] * s[3] + seq.data().len() * 4);
    out.extend_from_slice(SICG_MAGIC);
    out.extend_from_slice(&SICG_VERSION.to_le_bytes());
    for v in [s[0], s[1], s[2], s[3]] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&seq.start_day().to_le_bytes());
    out.extend(seq.mask().cells().iter().map(|&o| o as u8));
    for v in seq.data().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_sicg(bytes: &[u8]) -> Result<SicSequence> {
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    if bytes.len() < 4 || &bytes[..4] != SICG_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"SICG\""));
    }
    if bytes.len() < SICG_HEADER_LEN {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated header: {} of {SICG_HEADER_LEN} bytes", bytes.len()),
        ));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != SICG_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let (t, c, h, w) = (u32_at(6), u32_at(10), u32_at(14), u32_at(18));
    let start_day = u32_at(22) as u32;
    let cells = h
        .checked_mul(w)
        .ok_or_else(|| Error::format(14, "grid extent overflows"))?;
    let mask_end = SICG_HEADER_LEN + cells;
    if bytes.len() < mask_end {
        return Err(Error::format(
            bytes.len() as u64,
            format!("missing mask: expected {cells} bytes, found {}", bytes.len() - SICG_HEADER_LEN),
        ));
    }
    let mut ocean = Vec::with_capacity(cells);
    for (i, &b) in bytes[SICG_HEADER_LEN..mask_end].iter().enumerate() {
        match b {
            0 => ocean.push(false),
            1 => ocean.push(true),
            _ => {
                return Err(Error::format(
                    (SICG_HEADER_LEN + i) as u64,
                    format!("mask byte {b} is neither 0 nor 1"),
                ))
            }
        }
    }
    let count = [t, c, cells]
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(6, "payload size overflows"))?;
    let found = bytes.len() - mask_end;
    if found != count {
        let what = if found == 0 { "missing payload" } else { "payload length mismatch" };
        return Err(Error::format(
            mask_end as u64,
            format!("{what}: expected {count} bytes, found {found}"),
        ));
    }
    let data: Vec<f32> = bytes[mask_end..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let seq = SicSequence::from_raw(Tensor::new(&[t, c, h, w], data)?, Mask::new(h, w, ocean)?, start_day)
        .map_err(|e| Error::format(6, e.to_string()))?;
    if let Some((i, v)) = seq.first_invalid() {
        return Err(Error::format(
            (mask_end + 4 * i) as u64,
            format!("value {v} violates the SIC range or land contract"),
        ));
    }
    Ok(seq)
}

pub fn read_sicg(path: impl AsRef<Path>) -> Result<SicSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    decode_sicg(&bytes).map_err(|e| e.at(&path.display().to_string()))
}

pub fn write_sicg(seq: &SicSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_sicg(seq)).map_err(|e| Error::io_at(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SicSequence {
        let mask = Mask::new(2, 2, vec![true, true, false, true]).unwrap();
        let data = Tensor::new(&[2, 1, 2, 2], vec![0.0, 0.5, 0.0, 1.0, 0.25, 0.75, 0.0, 0.125]).unwrap();
        SicSequence::new(data, mask, 40).unwrap()
    }

    #[test]
    fn roundtrip_in_memory() {
        let s = sample();
        assert_eq!(decode_sicg(&encode_sicg(&s)).unwrap(), s);
    }

    #[test]
    fn header_only_names_missing_payload() {
        let bytes = encode_sicg(&sample());
        let err = decode_sicg(&bytes[..SICG_HEADER_LEN + 4]).unwrap_err();
        match err {
            Error::Format { offset, message } => {
                assert_eq!(offset, 30);
                assert!(message.contains("missing payload"), "{message}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version_report_offsets() {
        let mut bytes = encode_sicg(&sample());
        bytes[4] = 9;
        assert!(matches!(decode_sicg(&bytes), Err(Error::Format { offset: 4, .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_sicg(&bytes), Err(Error::Format { offset: 0, .. })));
    }
}
